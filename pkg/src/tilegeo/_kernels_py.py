"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` operation for operation so that both paths agree to
rounding. Used when the compiled extension is unavailable or when
``TILEGEO_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np

EPS = 1e-16
MAXIT = 10000
XSWITCH = 2.0
UNDERFLOW_X = 700.0
EUCLIDEAN = 0
GREAT_CIRCLE = 1

# Taylor coefficients of 1/Gamma(z) about 0: 1/Gamma(z) = sum_k c_k z^k.
RGAMMA_COEFFS = (
    0.0,
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
    1.4123806553180317816e-18,
    -2.2987456844353702066e-19,
)


def temme_gammas(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2.

    gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu) and
    gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2, summed from the even and odd
    parts of the 1/Gamma series so that gam1 has no cancellation at small mu.
    """
    mu2 = mu * mu
    gam1 = 0.0
    gam2 = 0.0
    # Horner over mu^2, highest order first.
    for k in range(len(RGAMMA_COEFFS) - 1, 0, -1):
        if k % 2 == 0:
            gam1 = gam1 * mu2 + RGAMMA_COEFFS[k]
        else:
            gam2 = gam2 * mu2 + RGAMMA_COEFFS[k]
    gam1 = -gam1
    gampl = gam2 - mu * gam1
    gammi = gam2 + mu * gam1
    return gam1, gam2, gampl, gammi


def _split_order(nu):
    nl = int(nu + 0.5)
    return nl, nu - nl


def _k_small(mu, x):
    """K_mu(x), K_{mu+1}(x) by Temme's series, x < 2, vectorised over x."""
    gam1, gam2, gampl, gammi = temme_gammas(mu)
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < EPS else pimu / math.sin(pimu)
    mu2 = mu * mu
    x2 = 0.5 * x
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < EPS, 1.0, np.sinh(e) / e)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    ee = np.exp(e)
    p = 0.5 * ee / gampl
    q = 0.5 / (ee * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, MAXIT + 1):
        if not active.any():
            break
        ff = np.where(active, (i * ff + p + q) / (i * i - mu2), ff)
        c = np.where(active, c * dd / i, c)
        p = np.where(active, p / (i - mu), p)
        q = np.where(active, q / (i + mu), q)
        delta = c * ff
        total = np.where(active, total + delta, total)
        total1 = np.where(active, total1 + c * (p - i * ff), total1)
        active &= np.abs(delta) >= np.abs(total) * EPS
    return total, total1 * (2.0 / x)


def _k_large_scaled(mu, x):
    """exp(x) K_mu(x), exp(x) K_{mu+1}(x) by Steed's continued fraction, x >= 2."""
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu2
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(2, MAXIT + 1):
        if not active.any():
            break
        a -= 2 * (i - 1)
        c = np.where(active, -a * c / i, c)
        qnew = (q1 - b * q2) / a
        q1 = np.where(active, q2, q1)
        q2 = np.where(active, qnew, q2)
        q = np.where(active, q + c * qnew, q)
        b = np.where(active, b + 2.0, b)
        d = np.where(active, 1.0 / (b + a * d), d)
        delh = np.where(active, (b * d - 1.0) * delh, delh)
        h = np.where(active, h + delh, h)
        dels = q * delh
        s = np.where(active, s + dels, s)
        active &= np.abs(dels / s) >= EPS
    h = a1 * h
    kmu = np.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _recur_up(mu, nl, x, kmu, k1):
    xi2 = 2.0 / x
    for i in range(1, nl + 1):
        ktemp = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = ktemp
    return kmu


def _bessel_parts(nu, x):
    """Return (small_mask, values) where values are K for x<2, exp(x)K otherwise."""
    nl, mu = _split_order(nu)
    out = np.empty_like(x)
    small = x < XSWITCH
    if small.any():
        xs = x[small]
        kmu, k1 = _k_small(mu, xs)
        out[small] = _recur_up(mu, nl, xs, kmu, k1)
    large = ~small
    if large.any():
        xl = x[large]
        kmu, k1 = _k_large_scaled(mu, xl)
        out[large] = _recur_up(mu, nl, xl, kmu, k1)
    return small, out


def _check_args(nu, x):
    if not (nu > 0.0 and math.isfinite(nu)):
        raise ValueError(f"order must be positive and finite, got {nu!r}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.size and not (np.all(x > 0.0) and np.all(np.isfinite(x))):
        raise ValueError("argument must be positive and finite")
    return x


def bessel_k(nu, x):
    """K_nu(x) for an array of x > 0; exact 0.0 where the result underflows."""
    x = _check_args(nu, x)
    flat = x.ravel()
    small, vals = _bessel_parts(nu, flat)
    with np.errstate(under="ignore"):
        out = np.where(small, vals, vals * np.exp(-flat))
    return out.reshape(x.shape)


def bessel_k_scaled(nu, x):
    """exp(x) * K_nu(x) for an array of x > 0."""
    x = _check_args(nu, x)
    flat = x.ravel()
    small, vals = _bessel_parts(nu, flat)
    out = np.where(small, vals * np.exp(flat), vals)
    return out.reshape(x.shape)


_HALF_INTEGER = {
    0.5: lambda x: 1.0,
    1.5: lambda x: 1.0 + x,
    2.5: lambda x: 1.0 + x + x * x / 3.0,
}


def matern_values(d, sigma_sq, beta, nu):
    """Matern covariance on an array of nonnegative distances."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    flat = d.ravel()
    out = np.zeros_like(flat)
    out[flat == 0.0] = sigma_sq
    x = flat / beta
    live = (flat > 0.0) & (x <= UNDERFLOW_X)
    if live.any() and nu in _HALF_INTEGER:
        # closed form for nu = k + 1/2, accurate to a few ulps
        xl = x[live]
        out[live] = sigma_sq * _HALF_INTEGER[nu](xl) * np.exp(-xl)
    elif live.any():
        xl = x[live]
        lognorm = (1.0 - nu) * math.log(2.0) - math.lgamma(nu)
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            small, vals = _bessel_parts(nu, xl)
            expo = lognorm + nu * np.log(xl) - np.where(small, 0.0, xl)
            res = sigma_sq * np.exp(expo) * vals
        # tiny x: K overflows (or nearly) while x^nu underflows
        huge = (vals > 1e300) | np.isnan(vals)
        if huge.any():
            with np.errstate(invalid="ignore"):
                res[huge] = np.where(
                    ~np.isfinite(vals[huge]), sigma_sq, sigma_sq * np.exp(expo[huge] + np.log(vals[huge]))
                )
        out[live] = res
    return out.reshape(d.shape)


def _distances(xa, ya, xb, yb, metric, radius):
    if metric == EUCLIDEAN:
        dx = xa[:, None] - xb[None, :]
        dy = ya[:, None] - yb[None, :]
        return np.sqrt(dx * dx + dy * dy)
    deg = math.pi / 180.0
    lat_a = ya * deg
    lat_b = yb * deg
    sdlat = np.sin((lat_a[:, None] - lat_b[None, :]) * 0.5)
    sdlon = np.sin((xa[:, None] - xb[None, :]) * deg * 0.5)
    h = sdlat * sdlat + (np.cos(lat_a)[:, None] * np.cos(lat_b)[None, :]) * (sdlon * sdlon)
    h = np.minimum(h, 1.0)
    return 2.0 * radius * np.arctan2(np.sqrt(h), np.sqrt(1.0 - h))


def distance_block(xa, ya, xb, yb, metric, radius, out):
    """Fill ``out[i, j]`` with the distance between point a_i and point b_j."""
    out[...] = _distances(xa, ya, xb, yb, metric, radius)


def matern_block(xa, ya, xb, yb, metric, radius, sigma_sq, beta, nu, out, diagonal):
    """Fill ``out`` with Matern covariances between two point sets.

    With ``diagonal`` set the two sets are identical; the lower triangle is
    computed and mirrored so the block is exactly symmetric.
    """
    d = _distances(xa, ya, xb, yb, metric, radius)
    if diagonal:
        il = np.tril_indices(d.shape[0], -1)
        vals = matern_values(d[il], sigma_sq, beta, nu)
        out[...] = 0.0
        out[il] = vals
        out[(il[1], il[0])] = vals
        np.fill_diagonal(out, sigma_sq)
    else:
        out[...] = matern_values(d, sigma_sq, beta, nu)


def matern_from_distances(d, sigma_sq, beta, nu, out):
    """Fill ``out`` with Matern covariances for a precomputed distance block."""
    out[...] = matern_values(d, sigma_sq, beta, nu)


# ---------------------------------------------------------------------------
# Dense tile kernels on Fortran-ordered blocks.

from scipy.linalg import blas as _blas  # noqa: E402
from scipy.linalg import lapack as _lapack  # noqa: E402


def potrf_tile(a):
    """Lower Cholesky factor of ``a`` in place; strict upper part zeroed."""
    c, info = _lapack.dpotrf(a, lower=1, clean=1, overwrite_a=1)
    if info == 0 and c is not a:
        a[...] = c
    return info


def trsm_tile(l, b):
    """``b := b @ inv(l).T`` with ``l`` lower triangular."""
    r = _blas.dtrsm(1.0, l, b, side=1, lower=1, trans_a=1, overwrite_b=1)
    if r is not b:
        b[...] = r


def syrk_tile(a, c):
    """``c := c - a @ a.T`` on the lower triangle of ``c``."""
    r = _blas.dsyrk(-1.0, a, beta=1.0, c=c, lower=1, overwrite_c=1)
    if r is not c:
        c[...] = r


def gemm_tile(a, b, c):
    """``c := c - a @ b.T``."""
    r = _blas.dgemm(-1.0, a, b, beta=1.0, c=c, trans_b=1, overwrite_c=1)
    if r is not c:
        c[...] = r
