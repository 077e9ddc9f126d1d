# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Bessel K of real order, Matern tiles, distance tiles.

Same algorithms as ``_kernels_py``; loops run without the GIL so tile tasks
scheduled on several threads execute concurrently.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport (
    atan2, cos, cosh, exp, fabs, fmin, isinf, lgamma, log, sin, sinh, sqrt, M_PI,
)

cnp.import_array()

DEF EPS = 1e-16
DEF MAXIT = 10000
DEF XSWITCH = 2.0
DEF UNDERFLOW_X = 700.0

EUCLIDEAN = 0
GREAT_CIRCLE = 1

cdef double[30] RGAMMA_COEFFS
RGAMMA_COEFFS[:] = [
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
]


cdef struct OrderConsts:
    int nl
    double mu
    double gam1
    double gam2
    double gampl
    double gammi
    double fact
    double lognorm
    int half



cdef OrderConsts order_consts(double nu) nogil:
    cdef OrderConsts oc
    cdef int k
    cdef double mu2, pimu
    oc.nl = <int>(nu + 0.5)
    oc.mu = nu - oc.nl
    mu2 = oc.mu * oc.mu
    oc.gam1 = 0.0
    oc.gam2 = 0.0
    k = 29
    while k > 0:
        if k % 2 == 0:
            oc.gam1 = oc.gam1 * mu2 + RGAMMA_COEFFS[k]
        else:
            oc.gam2 = oc.gam2 * mu2 + RGAMMA_COEFFS[k]
        k -= 1
    oc.gam1 = -oc.gam1
    oc.gampl = oc.gam2 - oc.mu * oc.gam1
    oc.gammi = oc.gam2 + oc.mu * oc.gam1
    pimu = M_PI * oc.mu
    oc.fact = 1.0 if fabs(pimu) < EPS else pimu / sin(pimu)
    oc.lognorm = (1.0 - nu) * log(2.0) - lgamma(nu)
    # nu = k + 1/2 for small k has a closed form, which is accurate to a few ulps
    oc.half = -1
    if nu == 0.5 or nu == 1.5 or nu == 2.5:
        oc.half = <int>nu
    return oc


cdef double bessel_part(const OrderConsts* oc, double x) nogil:
    """K_nu(x) when x < XSWITCH, exp(x) K_nu(x) otherwise."""
    cdef double mu = oc.mu
    cdef double mu2 = mu * mu
    cdef double x2, d, e, fact2, ff, total, total1, ee, p, q, c, dd, delta
    cdef double kmu, k1, ktemp, xi2
    cdef double b, h, delh, q1, q2, qnew, a1, a, s, dels
    cdef int i
    if x < XSWITCH:
        x2 = 0.5 * x
        d = -log(x2)
        e = mu * d
        fact2 = 1.0 if fabs(e) < EPS else sinh(e) / e
        ff = oc.fact * (oc.gam1 * cosh(e) + oc.gam2 * fact2 * d)
        total = ff
        ee = exp(e)
        p = 0.5 * ee / oc.gampl
        q = 0.5 / (ee * oc.gammi)
        c = 1.0
        dd = x2 * x2
        total1 = p
        for i in range(1, MAXIT + 1):
            ff = (i * ff + p + q) / (i * i - mu2)
            c = c * dd / i
            p = p / (i - mu)
            q = q / (i + mu)
            delta = c * ff
            total = total + delta
            total1 = total1 + c * (p - i * ff)
            if fabs(delta) < fabs(total) * EPS:
                break
        kmu = total
        k1 = total1 * (2.0 / x)
    else:
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
        q1 = 0.0
        q2 = 1.0
        a1 = 0.25 - mu2
        q = a1
        c = a1
        a = -a1
        s = 1.0 + q * delh
        for i in range(2, MAXIT + 1):
            a -= 2 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1 = q2
            q2 = qnew
            q = q + c * qnew
            b = b + 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h = h + delh
            dels = q * delh
            s = s + dels
            if fabs(dels / s) < EPS:
                break
        h = a1 * h
        kmu = sqrt(M_PI / (2.0 * x)) / s
        k1 = kmu * (mu + x + 0.5 - h) / x
    xi2 = 2.0 / x
    for i in range(1, oc.nl + 1):
        ktemp = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = ktemp
    return kmu


cdef inline double matern_one(const OrderConsts* oc, double d, double sigma_sq,
                              double beta, double nu) nogil:
    cdef double x, v
    if d == 0.0:
        return sigma_sq
    x = d / beta
    if x > UNDERFLOW_X:
        return 0.0
    if oc.half == 0:
        return sigma_sq * exp(-x)
    if oc.half == 1:
        return sigma_sq * (1.0 + x) * exp(-x)
    if oc.half == 2:
        return sigma_sq * (1.0 + x + x * x / 3.0) * exp(-x)
    v = bessel_part(oc, x)
    if x < XSWITCH:
        if v > 1e300 or v != v:
            # tiny x: K overflows (or nearly) while x^nu underflows; the
            # product is within rounding of its limit or needs log space
            if isinf(v) or v != v:
                return sigma_sq
            return sigma_sq * exp(oc.lognorm + nu * log(x) + log(v))
        return sigma_sq * exp(oc.lognorm + nu * log(x)) * v
    return sigma_sq * exp(oc.lognorm + nu * log(x) - x) * v


cdef inline double dist_one(double xa, double ya, double xb, double yb,
                            int metric, double radius) nogil:
    cdef double dx, dy, deg, lat_a, lat_b, sdlat, sdlon, h
    if metric == 0:
        dx = xa - xb
        dy = ya - yb
        return sqrt(dx * dx + dy * dy)
    deg = M_PI / 180.0
    lat_a = ya * deg
    lat_b = yb * deg
    sdlat = sin((lat_a - lat_b) * 0.5)
    sdlon = sin((xa - xb) * deg * 0.5)
    h = sdlat * sdlat + (cos(lat_a) * cos(lat_b)) * (sdlon * sdlon)
    h = fmin(h, 1.0)
    return 2.0 * radius * atan2(sqrt(h), sqrt(1.0 - h))


def _check_args(double nu, x):
    if not (nu > 0.0 and nu < float("inf")):
        raise ValueError(f"order must be positive and finite, got {nu!r}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.size and not (np.all(x > 0.0) and np.all(np.isfinite(x))):
        raise ValueError("argument must be positive and finite")
    return x


def bessel_k(double nu, x):
    """K_nu(x) for an array of x > 0; exact 0.0 where the result underflows."""
    x = _check_args(nu, x)
    cdef double[::1] xf = x.ravel()
    out = np.empty(xf.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef OrderConsts oc = order_consts(nu)
    cdef Py_ssize_t i
    with nogil:
        for i in range(xf.shape[0]):
            o[i] = bessel_part(&oc, xf[i])
            if xf[i] >= XSWITCH:
                o[i] = o[i] * exp(-xf[i])
    return out.reshape(x.shape)


def bessel_k_scaled(double nu, x):
    """exp(x) * K_nu(x) for an array of x > 0."""
    x = _check_args(nu, x)
    cdef double[::1] xf = x.ravel()
    out = np.empty(xf.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef OrderConsts oc = order_consts(nu)
    cdef Py_ssize_t i
    with nogil:
        for i in range(xf.shape[0]):
            o[i] = bessel_part(&oc, xf[i])
            if xf[i] < XSWITCH:
                o[i] = o[i] * exp(xf[i])
    return out.reshape(x.shape)


def matern_values(d, double sigma_sq, double beta, double nu):
    """Matern covariance on an array of nonnegative distances."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    cdef double[::1] df = d.ravel()
    out = np.empty(df.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef OrderConsts oc = order_consts(nu)
    cdef Py_ssize_t i
    with nogil:
        for i in range(df.shape[0]):
            o[i] = matern_one(&oc, df[i], sigma_sq, beta, nu)
    return out.reshape(d.shape)


def distance_block(const double[::1] xa, const double[::1] ya,
                   const double[::1] xb, const double[::1] yb,
                   int metric, double radius, double[:, :] out):
    """Fill ``out[i, j]`` with the distance between point a_i and point b_j."""
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(xa.shape[0]):
            for j in range(xb.shape[0]):
                out[i, j] = dist_one(xa[i], ya[i], xb[j], yb[j], metric, radius)


def matern_block(const double[::1] xa, const double[::1] ya,
                 const double[::1] xb, const double[::1] yb,
                 int metric, double radius, double sigma_sq, double beta,
                 double nu, double[:, :] out, bint diagonal):
    """Fill ``out`` with Matern covariances between two point sets.

    With ``diagonal`` set the two sets are identical; the lower triangle is
    computed and mirrored so the block is exactly symmetric.
    """
    cdef OrderConsts oc = order_consts(nu)
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        if diagonal:
            for i in range(xa.shape[0]):
                out[i, i] = sigma_sq
                for j in range(i):
                    v = matern_one(&oc, dist_one(xa[i], ya[i], xa[j], ya[j],
                                                 metric, radius),
                                   sigma_sq, beta, nu)
                    out[i, j] = v
                    out[j, i] = v
        else:
            for i in range(xa.shape[0]):
                for j in range(xb.shape[0]):
                    out[i, j] = matern_one(
                        &oc, dist_one(xa[i], ya[i], xb[j], yb[j], metric, radius),
                        sigma_sq, beta, nu)


def matern_from_distances(const double[:, :] d, double sigma_sq, double beta,
                          double nu, double[:, :] out):
    """Fill ``out`` with Matern covariances for a precomputed distance block."""
    cdef OrderConsts oc = order_consts(nu)
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(d.shape[0]):
            for j in range(d.shape[1]):
                out[i, j] = matern_one(&oc, d[i, j], sigma_sq, beta, nu)


# ---------------------------------------------------------------------------
# Dense tile kernels on Fortran-ordered blocks.

from scipy.linalg.cython_blas cimport dgemm, dsyrk, dtrsm
from scipy.linalg.cython_lapack cimport dpotrf


def potrf_tile(double[::1, :] a):
    """Lower Cholesky factor of ``a`` in place; strict upper part zeroed.

    Returns the LAPACK ``info`` code (0 on success, k > 0 when the leading
    minor of order k is not positive definite).
    """
    cdef int n = a.shape[0]
    cdef int lda = n if n > 0 else 1
    cdef int info = 0
    cdef char uplo = b'L'
    cdef Py_ssize_t i, j
    with nogil:
        dpotrf(&uplo, &n, &a[0, 0], &lda, &info)
        if info == 0:
            for j in range(1, n):
                for i in range(j):
                    a[i, j] = 0.0
    return info


def trsm_tile(double[::1, :] l, double[::1, :] b):
    """``b := b @ inv(l).T`` with ``l`` lower triangular."""
    cdef int m = b.shape[0]
    cdef int n = b.shape[1]
    cdef double one = 1.0
    cdef char side = b'R', uplo = b'L', trans = b'T', diag = b'N'
    with nogil:
        dtrsm(&side, &uplo, &trans, &diag, &m, &n, &one, &l[0, 0], &n, &b[0, 0], &m)


def syrk_tile(double[::1, :] a, double[::1, :] c):
    """``c := c - a @ a.T`` on the lower triangle of ``c``."""
    cdef int n = c.shape[0]
    cdef int k = a.shape[1]
    cdef double alpha = -1.0, beta = 1.0
    cdef char uplo = b'L', trans = b'N'
    with nogil:
        dsyrk(&uplo, &trans, &n, &k, &alpha, &a[0, 0], &n, &beta, &c[0, 0], &n)


def gemm_tile(double[::1, :] a, double[::1, :] b, double[::1, :] c):
    """``c := c - a @ b.T``."""
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k = a.shape[1]
    cdef double alpha = -1.0, beta = 1.0
    cdef char ta = b'N', tb = b'T'
    with nogil:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, &a[0, 0], &m, &b[0, 0], &n, &beta, &c[0, 0], &m)
