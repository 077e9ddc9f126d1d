"""Exact simulation of zero-mean Gaussian random fields with Matérn covariance."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SingularMatrixError
from .geometry import EUCLIDEAN, DistanceMetric, LocationSet, random_locations
from .kernel import MaternParams, assemble_covariance
from .likelihood import ComputeBackend, GaussianField
from .rng import NOISE, RandomStream
from .tiles import MatrixMode, cholesky_in_place, lower_matvec


@dataclass(frozen=True)
class SimulationSpec:
    """Everything that determines one realisation.

    Only ``backend.workers`` and ``backend.tile_size`` are used: simulation
    always factorises the exact covariance.
    """

    params: MaternParams
    locs: LocationSet
    seed: int = 0
    backend: ComputeBackend = ComputeBackend()


def simulate_at(spec: SimulationSpec) -> GaussianField:
    """Draw ``z = L e`` with ``L`` the exact Cholesky factor of the covariance of
    ``spec.locs`` and ``e`` standard normal from the noise stream of ``spec.seed``.

    Raises
    ------
    SingularMatrixError
        When locations coincide (or nearly so) and the covariance is singular.
    """
    b = spec.backend
    n = spec.locs.count
    cov = assemble_covariance(spec.locs, spec.params, b.layout(n), b.workers, MatrixMode.exact())
    try:
        factor = cholesky_in_place(cov, b.workers)
    except SingularMatrixError as exc:
        exc.params = spec.params
        raise
    e = RandomStream(spec.seed, NOISE).normals(n)
    z = lower_matvec(factor, e, b.workers)
    return GaussianField(spec.locs, z)


def simulate_random(
    n: int,
    params: MaternParams,
    metric: DistanceMetric = EUCLIDEAN,
    seed: int = 0,
    backend: ComputeBackend = ComputeBackend(),
) -> GaussianField:
    """Field at ``n`` uniform random locations on the unit square.

    The seed drives both the locations (stream 0) and the noise (stream 1),
    so changing ``params`` alone never moves the locations.
    """
    locs = random_locations(n, seed, metric)
    return simulate_at(SimulationSpec(params, locs, seed, backend))
