"""Gaussian log-likelihood under the tiled backends, and maximum likelihood fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FitError, OptimizationError, SingularMatrixError
from .geometry import LocationSet, locality_order
from .kernel import CovarianceAssembler, MaternParams, ParamBounds, assemble_covariance
from .optimizer import OptimizerConfig, OptTrace, maximize
from .tiles import (
    MatrixMode,
    ModeKind,
    Side,
    TileLayout,
    cholesky_in_place,
    log_det_from_factor,
    solve_triangular,
)

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_TILE_SIZE = 320


@dataclass(frozen=True)
class TrendRecord:
    """Linear mean ``c + a * x + b * y`` removed from the observations."""

    c: float
    a: float
    b: float

    def evaluate(self, locs: LocationSet) -> np.ndarray:
        return self.c + self.a * locs.xs + self.b * locs.ys

    def as_tuple(self):
        return (self.c, self.a, self.b)


@dataclass(frozen=True)
class GaussianField:
    """Observations ``z`` at ``locs``; ``mean`` is None for a zero-mean field,
    otherwise the trend already subtracted from ``z``."""

    locs: LocationSet
    z: np.ndarray
    mean: TrendRecord | None = None

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64).ravel()
        if z.size != self.locs.count:
            raise ValueError(f"{z.size} observations for {self.locs.count} locations")
        if not np.all(np.isfinite(z)):
            raise DomainError("observations must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.size

    def take(self, index) -> GaussianField:
        index = np.asarray(index)
        return GaussianField(self.locs.take(index), self.z[index], self.mean)


@dataclass(frozen=True)
class ComputeBackend:
    """How the covariance is stored and factorised.

    ``mode`` selects exact, DST or TLR arithmetic, ``workers`` bounds the
    task parallelism and ``tile_size`` is clamped to the matrix order.
    """

    mode: MatrixMode = MatrixMode()
    workers: int = 1
    tile_size: int = DEFAULT_TILE_SIZE

    def __post_init__(self):
        if int(self.workers) < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if int(self.tile_size) < 1:
            raise ValueError(f"tile size must be at least 1, got {self.tile_size}")
        object.__setattr__(self, "workers", int(self.workers))
        object.__setattr__(self, "tile_size", int(self.tile_size))

    @classmethod
    def exact(cls, workers=1, tile_size=DEFAULT_TILE_SIZE) -> ComputeBackend:
        return cls(MatrixMode.exact(), workers, tile_size)

    @classmethod
    def dst(cls, bandwidth=1, workers=1, tile_size=DEFAULT_TILE_SIZE) -> ComputeBackend:
        return cls(MatrixMode.dst(bandwidth), workers, tile_size)

    @classmethod
    def tlr(cls, accuracy, workers=1, tile_size=DEFAULT_TILE_SIZE) -> ComputeBackend:
        return cls(MatrixMode.tlr(accuracy), workers, tile_size)

    def layout(self, n) -> TileLayout:
        return TileLayout.create(n, self.tile_size)

    @property
    def name(self) -> str:
        return self.mode.kind.name.lower()

    def reorders(self) -> bool:
        """Approximate modes sort locations along a space-filling curve first."""
        return self.mode.kind is not ModeKind.EXACT


@dataclass
class FitResult:
    """Outcome of :func:`fit_mle`. ``time_per_iter = total_time / iterations``."""

    params: MaternParams
    log_lik: float
    iterations: int
    total_time: float
    time_per_iter: float
    trace: OptTrace = field(repr=False, default=None)
    singular_evaluations: int = 0


def prepare_field(field: GaussianField, backend: ComputeBackend) -> GaussianField:
    """Field in the row order the backend factorises in.

    The likelihood is invariant under a joint permutation of locations and
    observations, so approximate backends are free to use a locality order
    that keeps strongly correlated pairs in nearby tiles.
    """
    if backend.reorders():
        return field.take(locality_order(field.locs))
    return field


def _loglik_from_matrix(cov, z, workers):
    factor = cholesky_in_place(cov, workers)
    y = solve_triangular(factor, z, Side.FORWARD)
    logdet = log_det_from_factor(factor)
    return -0.5 * z.size * LOG_2PI - 0.5 * logdet - 0.5 * float(y @ y)


def log_likelihood(field: GaussianField, params: MaternParams,
                   backend: ComputeBackend = ComputeBackend()) -> float:
    """Zero-mean Gaussian log-likelihood of ``field.z`` under Matérn ``params``.

    Computed as ``-(n/2) log(2 pi) - log|Sigma| / 2 - |L^-1 z|^2 / 2`` from a
    tiled Cholesky factor ``L`` of the covariance, which under DST/TLR is the
    truncated or compressed surrogate.

    Raises
    ------
    SingularMatrixError
        With ``params`` attached when the covariance is not numerically
        positive definite.
    """
    return LikelihoodEvaluator(field, backend, cache=False)(params)


class LikelihoodEvaluator:
    """Callable ``params -> log-likelihood`` for a fixed field and backend.

    With ``cache`` set the tile distances are computed once and reused.
    """

    def __init__(self, field: GaussianField, backend: ComputeBackend = ComputeBackend(),
                 cache: bool = True):
        self.backend = backend
        self.field = prepare_field(field, backend)
        self.layout = backend.layout(self.field.n)
        self._assembler = (
            CovarianceAssembler(self.field.locs, self.layout, backend.workers, backend.mode)
            if cache else None
        )

    def __call__(self, params: MaternParams) -> float:
        b = self.backend
        if self._assembler is not None:
            cov = self._assembler.assemble(params)
        else:
            cov = assemble_covariance(self.field.locs, params, self.layout, b.workers, b.mode)
        try:
            return _loglik_from_matrix(cov, self.field.z, b.workers)
        except SingularMatrixError as exc:
            exc.params = params
            raise


def fit_mle(
    field: GaussianField,
    bounds: ParamBounds = ParamBounds(),
    opt: OptimizerConfig | None = None,
    backend: ComputeBackend = ComputeBackend(),
) -> FitResult:
    """Maximum likelihood estimate of ``(sigma_sq, beta, nu)`` inside ``bounds``.

    Parameters
    ----------
    field : GaussianField
    bounds : ParamBounds
        Search box.
    opt : OptimizerConfig, optional
        Tolerance, evaluation budget and start; its box must equal
        ``bounds``. Defaults to tol 1e-4, no budget, start at the lower
        bounds.
    backend : ComputeBackend

    Returns
    -------
    FitResult
        ``iterations`` counts likelihood evaluations and ``total_time`` is the
        wall-clock time spent inside them.

    Raises
    ------
    FitError
        When every evaluation fails; the partial trace is attached.
    """
    if opt is None:
        opt = OptimizerConfig(bounds.lower, bounds.upper)
    elif not (np.array_equal(opt.lower, bounds.lower) and np.array_equal(opt.upper, bounds.upper)):
        raise ValueError("optimizer box differs from the parameter bounds")
    evaluate = LikelihoodEvaluator(field, backend)
    singular = 0

    def objective(theta):
        nonlocal singular
        try:
            return evaluate(MaternParams.from_array(theta))
        except SingularMatrixError:
            singular += 1
            return -math.inf

    try:
        trace = maximize(objective, opt)
    except OptimizationError as exc:
        raise FitError(f"likelihood maximisation failed: {exc}", exc.trace) from exc
    total = trace.total_time
    return FitResult(
        params=MaternParams.from_array(trace.best_point),
        log_lik=trace.best_value,
        iterations=trace.iterations,
        total_time=total,
        time_per_iter=total / trace.iterations,
        trace=trace,
        singular_evaluations=singular,
    )


def detrend_linear(locs: LocationSet, z):
    """Ordinary least squares fit of ``z ~ c + a x + b y``.

    Returns
    -------
    residuals : ndarray
        ``z`` minus the fitted plane.
    coefficients : TrendRecord
        ``(c, a, b)``.

    Raises
    ------
    DomainError
        With fewer than three points or collinear coordinates.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != locs.count:
        raise ValueError(f"{z.size} observations for {locs.count} locations")
    if locs.count < 3:
        raise DomainError("a linear trend needs at least three locations")
    design = np.column_stack([np.ones(locs.count), locs.xs, locs.ys])
    coef, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    if rank < 3:
        raise DomainError("trend design matrix is rank deficient (collinear coordinates)")
    trend = TrendRecord(float(coef[0]), float(coef[1]), float(coef[2]))
    return z - design @ coef, trend
