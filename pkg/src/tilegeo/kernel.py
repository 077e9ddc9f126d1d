"""Matérn covariance, the Bessel function behind it, and covariance assembly.

The covariance between two sites at distance ``d`` is

    C(d) = sigma_sq * 2**(1 - nu) / Gamma(nu) * (d / beta)**nu * K_nu(d / beta)

with ``C(0) = sigma_sq``. Note the range enters as ``d / beta``, not
``sqrt(2 nu) d / beta``; convert ``beta`` when comparing with packages that
use the other convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DomainError
from .geometry import LocationSet
from .scheduler import run_independent
from .tiles import (
    MatrixMode,
    ModeKind,
    TiledMatrix,
    TileLayout,
    tlr_compress,
)

UNDERFLOW_RATIO = 700.0


class SingularityWarning(UserWarning):
    """Locations coincide, so the covariance matrix will be singular."""


def _positive(name, value):
    value = float(value)
    if not (value > 0.0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class MaternParams:
    """Matérn parameters: variance ``sigma_sq``, range ``beta``, smoothness ``nu``."""

    sigma_sq: float
    beta: float
    nu: float

    def __post_init__(self):
        for name in ("sigma_sq", "beta", "nu"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    @classmethod
    def from_array(cls, theta) -> MaternParams:
        s, b, n = (float(v) for v in theta)
        return cls(s, b, n)

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_sq, self.beta, self.nu])

    def __str__(self):
        return f"(sigma_sq={self.sigma_sq!r}, beta={self.beta!r}, nu={self.nu!r})"


@dataclass(frozen=True)
class ParamBounds:
    """Box ``lower <= theta <= upper`` for ``theta = (sigma_sq, beta, nu)``."""

    lower: tuple = (0.001, 0.001, 0.001)
    upper: tuple = (5.0, 5.0, 5.0)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("bounds must have three entries (sigma_sq, beta, nu)")
        for a, b in zip(lo, hi):
            if not (0.0 < a <= b and math.isfinite(b)):
                raise ValueError(f"invalid bounds: need 0 < lower <= upper < inf, got {lo}, {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=np.float64)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))


def bessel_k(nu, x):
    """Modified Bessel function of the second kind ``K_nu(x)`` for real ``nu > 0``.

    Parameters
    ----------
    nu : float
        Order, strictly positive.
    x : float or array_like
        Argument(s), strictly positive.

    Returns
    -------
    float or ndarray
        ``K_nu(x)``; exactly 0.0 where the value underflows double precision
        (see :func:`bessel_k_underflow`).

    Raises
    ------
    DomainError
        If ``nu <= 0`` or any ``x <= 0`` or non-finite.
    """
    nu = float(nu)
    if not (nu > 0.0 and math.isfinite(nu)):
        raise DomainError(f"order must be positive and finite, got {nu!r}")
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and not (np.all(arr > 0.0) and np.all(np.isfinite(arr))):
        raise DomainError("bessel_k needs x > 0; handle zero distance before calling")
    out = kernels.bessel_k(nu, arr)
    return np.asarray(out).item() if np.ndim(x) == 0 else out


def bessel_k_scaled(nu, x):
    """``exp(x) * K_nu(x)``, which stays representable where ``K_nu`` underflows."""
    nu = float(nu)
    if not (nu > 0.0 and math.isfinite(nu)):
        raise DomainError(f"order must be positive and finite, got {nu!r}")
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and not (np.all(arr > 0.0) and np.all(np.isfinite(arr))):
        raise DomainError("bessel_k needs x > 0")
    out = kernels.bessel_k_scaled(nu, arr)
    return np.asarray(out).item() if np.ndim(x) == 0 else out


def bessel_k_underflow(nu, x):
    """True where ``K_nu(x)`` is positive mathematically but rounds to 0.0."""
    return np.logical_and(
        np.asarray(bessel_k(nu, x)) == 0.0, np.asarray(bessel_k_scaled(nu, x)) > 0.0
    )


def matern(d, params: MaternParams):
    """Matérn covariance at distance(s) ``d >= 0``.

    Returns ``sigma_sq`` at ``d == 0`` and exactly 0 once ``d / beta > 700``.

    Examples
    --------
    >>> round(matern(0.1, MaternParams(1.0, 0.1, 0.5)), 7)
    0.3678794
    """
    arr = np.asarray(d, dtype=np.float64)
    if arr.size and not (np.all(arr >= 0.0) and np.all(np.isfinite(arr))):
        raise DomainError("distances must be nonnegative and finite")
    out = kernels.matern_values(arr, params.sigma_sq, params.beta, params.nu)
    return np.asarray(out).item() if np.ndim(d) == 0 else out


def _warn_duplicates(locs: LocationSet):
    pts = np.column_stack([locs.xs, locs.ys])
    if np.unique(pts, axis=0).shape[0] < locs.count:
        warnings.warn(
            "duplicate locations: covariance rows are identical and the matrix is singular",
            SingularityWarning,
            stacklevel=3,
        )


def _check_layout(locs, layout):
    if layout is None:
        return TileLayout.create(locs.count, min(locs.count, 320))
    if layout.n != locs.count:
        raise ValueError(f"layout order {layout.n} does not match {locs.count} locations")
    return layout


def assemble_covariance(
    locs: LocationSet,
    params: MaternParams,
    layout: TileLayout | None = None,
    workers: int = 1,
    mode: MatrixMode = MatrixMode(),
) -> TiledMatrix:
    """Tiled Matérn covariance matrix of ``locs``.

    Only the lower tile triangle is built, one independent task per tile.
    Under DST the annihilated tiles are never evaluated; under TLR the exact
    tiles are compressed afterwards.
    """
    layout = _check_layout(locs, layout)
    _warn_duplicates(locs)
    build_mode = MatrixMode.exact() if mode.kind is ModeKind.TLR else mode
    out = TiledMatrix.empty(layout, build_mode)
    metric, radius = locs.metric.code, locs.metric.sphere_radius
    xs, ys = locs.xs, locs.ys

    def fill(i, j):
        si, sj = layout.slice(i), layout.slice(j)
        kernels.matern_block(
            xs[si], ys[si], xs[sj], ys[sj], metric, radius,
            params.sigma_sq, params.beta, params.nu,
            out.tiles[i][j].data, i == j,
        )

    run_independent(
        [
            lambda i=i, j=j: fill(i, j)
            for i in range(layout.nt)
            for j in range(i + 1)
            if build_mode.keeps(i, j)
        ],
        workers,
    )
    if mode.kind is ModeKind.TLR:
        return tlr_compress(out, mode.accuracy, workers)
    return out


class CovarianceAssembler:
    """Repeated covariance assembly over a fixed location set.

    Distances of every stored tile are computed once. When many distances
    repeat (regular grids), the Matérn function is evaluated once per
    distinct distance and scattered, which gives values bitwise equal to the
    per-entry evaluation. Intended for likelihood optimisation, where the
    same locations are assembled hundreds of times.
    """

    DEDUP_RATIO = 0.25

    def __init__(self, locs: LocationSet, layout: TileLayout | None = None, workers: int = 1,
                 mode: MatrixMode = MatrixMode()):
        self.locs = locs
        self.layout = _check_layout(locs, layout)
        self.workers = int(workers)
        self.mode = mode
        _warn_duplicates(locs)
        self._build_mode = MatrixMode.exact() if mode.kind is ModeKind.TLR else mode
        lay = self.layout
        self._keys = [
            (i, j) for i in range(lay.nt) for j in range(i + 1) if self._build_mode.keeps(i, j)
        ]
        self._dist = {}
        metric, radius = locs.metric.code, locs.metric.sphere_radius

        def dist(i, j):
            si, sj = lay.slice(i), lay.slice(j)
            d = np.empty((lay.size(i), lay.size(j)), order="F")
            kernels.distance_block(locs.xs[si], locs.ys[si], locs.xs[sj], locs.ys[sj],
                                   metric, radius, d)
            self._dist[(i, j)] = d

        run_independent([lambda k=k: dist(*k) for k in self._keys], self.workers)
        self._unique = None
        flat = np.concatenate([self._dist[k].ravel(order="F") for k in self._keys])
        uniq, inverse = np.unique(flat, return_inverse=True)
        if uniq.size <= self.DEDUP_RATIO * flat.size:
            self._unique = uniq
            self._inverse = []
            pos = 0
            for k in self._keys:
                size = self._dist[k].size
                self._inverse.append(inverse[pos:pos + size])
                pos += size

    def assemble(self, params: MaternParams) -> TiledMatrix:
        lay = self.layout
        out = TiledMatrix.empty(lay, self._build_mode)
        s, b, nu = params.sigma_sq, params.beta, params.nu
        if self._unique is not None:
            values = kernels.matern_values(self._unique, s, b, nu)

            def fill(idx):
                i, j = self._keys[idx]
                t = out.tiles[i][j].data
                t.reshape(-1, order="F")[...] = values[self._inverse[idx]]
        else:
            def fill(idx):
                i, j = self._keys[idx]
                kernels.matern_from_distances(self._dist[(i, j)], s, b, nu, out.tiles[i][j].data)

        run_independent([lambda k=k: fill(k) for k in range(len(self._keys))], self.workers)
        if self.mode.kind is ModeKind.TLR:
            return tlr_compress(out, self.mode.accuracy, self.workers)
        return out


def cross_covariance(a: LocationSet, b: LocationSet, params: MaternParams, block: int = 256,
                     workers: int = 1) -> np.ndarray:
    """Dense ``len(a) x len(b)`` Matérn cross-covariance, filled in column blocks."""
    if a.metric != b.metric:
        raise ValueError("location sets use different metrics")
    out = np.empty((a.count, b.count), order="F")
    metric, radius = a.metric.code, a.metric.sphere_radius
    starts = range(0, b.count, block)

    def fill(c0):
        sl = slice(c0, min(c0 + block, b.count))
        kernels.matern_block(a.xs, a.ys, b.xs[sl], b.ys[sl], metric, radius,
                             params.sigma_sq, params.beta, params.nu, out[:, sl], False)

    run_independent([lambda c=c: fill(c) for c in starts], workers)
    return out
