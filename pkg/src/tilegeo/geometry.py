"""Observation locations and the distances between them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels
from .errors import DomainError
from .rng import LOCATIONS, RandomStream

EARTH_RADIUS_KM = 6371.0
MIN_SEPARATION = 1e-8


class MetricKind(Enum):
    EUCLIDEAN = "euclidean"
    GREAT_CIRCLE = "greatcircle"


@dataclass(frozen=True)
class DistanceMetric:
    """How distances between two locations are measured.

    Great-circle coordinates are (longitude, latitude) in degrees and the
    distance is the haversine arc length on a sphere of ``sphere_radius``.
    """

    kind: MetricKind = MetricKind.EUCLIDEAN
    sphere_radius: float = EARTH_RADIUS_KM

    def __post_init__(self):
        if self.kind is MetricKind.GREAT_CIRCLE and not (
            self.sphere_radius > 0 and math.isfinite(self.sphere_radius)
        ):
            raise DomainError(f"sphere radius must be positive, got {self.sphere_radius}")

    @classmethod
    def parse(cls, value, sphere_radius=EARTH_RADIUS_KM) -> DistanceMetric:
        """Build a metric from ``euclidean``/``greatcircle`` or the 0/1 aliases."""
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        if key in ("0", "euclidean"):
            return cls(MetricKind.EUCLIDEAN, sphere_radius)
        if key in ("1", "greatcircle"):
            return cls(MetricKind.GREAT_CIRCLE, sphere_radius)
        raise ValueError(f"unknown distance metric {value!r}")

    @property
    def code(self) -> int:
        return 0 if self.kind is MetricKind.EUCLIDEAN else 1

    @property
    def name(self) -> str:
        return self.kind.value


EUCLIDEAN = DistanceMetric(MetricKind.EUCLIDEAN)
GREAT_CIRCLE = DistanceMetric(MetricKind.GREAT_CIRCLE)


def _check_coordinates(xs, ys, metric):
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise DomainError("coordinates must be finite")
    if metric.kind is MetricKind.GREAT_CIRCLE:
        if np.any(ys < -90.0) or np.any(ys > 90.0):
            raise DomainError("latitude outside [-90, 90] degrees")
        if np.any(xs < -180.0) or np.any(xs >= 360.0):
            raise DomainError("longitude outside [-180, 360) degrees")


@dataclass(frozen=True)
class LocationSet:
    """``n`` two-dimensional locations and the metric they are measured under."""

    xs: np.ndarray
    ys: np.ndarray
    metric: DistanceMetric = field(default=EUCLIDEAN)

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64).ravel()
        ys = np.array(self.ys, dtype=np.float64).ravel()
        if xs.shape != ys.shape:
            raise ValueError(f"xs and ys differ in length ({xs.size} vs {ys.size})")
        if xs.size == 0:
            raise ValueError("a location set needs at least one point")
        _check_coordinates(xs, ys, self.metric)
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def count(self) -> int:
        return self.xs.size

    def __len__(self):
        return self.xs.size

    def take(self, index) -> LocationSet:
        index = np.asarray(index)
        return LocationSet(self.xs[index], self.ys[index], self.metric)

    def min_separation(self) -> float:
        """Smallest pairwise distance (Euclidean in coordinate space)."""
        if self.count < 2:
            return math.inf
        pts = np.column_stack([self.xs, self.ys])
        d, _ = cKDTree(pts).query(pts, k=2)
        return float(d[:, 1].min())


def distance(a, b, metric: DistanceMetric = EUCLIDEAN) -> float:
    """Distance between points ``a = (x, y)`` and ``b = (x, y)``.

    The evaluation order is fixed so that ``distance(a, b) == distance(b, a)``
    holds exactly.
    """
    xa, ya = float(a[0]), float(a[1])
    xb, yb = float(b[0]), float(b[1])
    _check_coordinates(np.array([xa, xb]), np.array([ya, yb]), metric)
    if metric.kind is MetricKind.EUCLIDEAN:
        dx = xa - xb
        dy = ya - yb
        return math.sqrt(dx * dx + dy * dy)
    deg = math.pi / 180.0
    lat_a = ya * deg
    lat_b = yb * deg
    sdlat = math.sin((lat_a - lat_b) * 0.5)
    sdlon = math.sin((xa - xb) * deg * 0.5)
    h = sdlat * sdlat + (math.cos(lat_a) * math.cos(lat_b)) * (sdlon * sdlon)
    h = min(h, 1.0)
    return 2.0 * metric.sphere_radius * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))


def distance_matrix(a: LocationSet, b: LocationSet | None = None) -> np.ndarray:
    """Dense matrix of distances between every point of ``a`` and of ``b``."""
    b = a if b is None else b
    if a.metric != b.metric:
        raise ValueError("location sets use different metrics")
    out = np.empty((a.count, b.count))
    kernels.distance_block(a.xs, a.ys, b.xs, b.ys, a.metric.code, a.metric.sphere_radius, out)
    return out


def _distinct_points(stream, n, min_sep=MIN_SEPARATION):
    """Draw ``n`` points from ``stream``, redrawing any point that lands within
    ``min_sep`` of an earlier one."""
    pts = stream.uniforms(2 * n).reshape(n, 2)
    while n > 1:
        pairs = cKDTree(pts).query_pairs(r=min_sep, output_type="ndarray")
        if pairs.size:
            close = np.hypot(*(pts[pairs[:, 0]] - pts[pairs[:, 1]]).T) < min_sep
            pairs = pairs[close]
        if not pairs.size:
            break
        for j in np.unique(pairs.max(axis=1)):
            pts[j] = stream.uniforms(2)
    return pts


def random_locations(n: int, seed: int, metric: DistanceMetric = EUCLIDEAN) -> LocationSet:
    """``n`` points drawn uniformly on the unit square from the location stream of ``seed``."""
    if int(n) < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    pts = _distinct_points(RandomStream(seed, LOCATIONS), int(n))
    return LocationSet(pts[:, 0], pts[:, 1], metric)


def grid_locations(
    nx: int,
    ny: int,
    x_range=(0.0, 1.0),
    y_range=(0.0, 1.0),
    metric: DistanceMetric = EUCLIDEAN,
) -> LocationSet:
    """Regular ``nx`` by ``ny`` grid on the left-open boxes ``(lo, hi]``, x varying fastest.

    Grid lines sit at ``lo + k * (hi - lo) / nx`` for ``k = 1..nx``, so
    ``grid_locations(40, 40, (0, 2), (0, 2))`` reproduces the
    ``(1:40) / 20`` construction.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be positive, got {nx}x{ny}")
    (x0, x1), (y0, y1) = x_range, y_range
    if not (x1 > x0 and y1 > y0):
        raise ValueError("grid ranges must be nondegenerate")
    gx = x0 + np.arange(1, nx + 1) * (x1 - x0) / nx
    gy = y0 + np.arange(1, ny + 1) * (y1 - y0) / ny
    xs = np.tile(gx, ny)
    ys = np.repeat(gy, nx)
    return LocationSet(xs, ys, metric)


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, locs: LocationSet, z=None, extra: dict | None = None) -> None:
    """Write ``x,y,z`` rows (plus any ``extra`` columns); missing ``z`` is left empty."""
    extra = extra or {}
    for name, col in extra.items():
        if len(col) != locs.count:
            raise ValueError(f"column {name!r} has wrong length")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["x", "y", "z", *extra]) + "\n")
        for i in range(locs.count):
            row = [_fmt(locs.xs[i]), _fmt(locs.ys[i]), "" if z is None else _fmt(z[i])]
            row.extend(_fmt(col[i]) for col in extra.values())
            fh.write(",".join(row) + "\n")


def read_csv(path, metric: DistanceMetric = EUCLIDEAN):
    """Read an ``x,y,z`` file; returns ``(locations, z)`` with ``z`` None when the
    column is absent or entirely empty. Partially empty ``z`` raises."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        if "x" not in fields or "y" not in fields:
            raise ValueError(f"{path}: header must contain x and y columns")
        xs, ys, zs = [], [], []
        for row in reader:
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            zs.append(row.get("z", ""))
    locs = LocationSet(np.array(xs), np.array(ys), metric)
    if "z" not in fields or all(v == "" for v in zs):
        return locs, None
    if any(v == "" for v in zs):
        raise ValueError(f"{path}: z column is partially empty")
    return locs, np.array([float(v) for v in zs])


def _spread_bits(v):
    v = v.astype(np.uint64) & np.uint64(0xFFFF)
    for shift, mask in ((8, 0x00FF00FF), (4, 0x0F0F0F0F), (2, 0x33333333), (1, 0x55555555)):
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def locality_order(locs: LocationSet) -> np.ndarray:
    """Permutation sorting locations along a Morton (Z-order) curve.

    Coordinates are quantised to 16 bits over their bounding box and the bits
    interleaved. Nearby points end up in nearby rows, which is what makes
    off-diagonal tiles weakly correlated (DST) and numerically low-rank (TLR).
    The sort is stable, so ties keep their input order.
    """
    def quantise(v):
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            return np.zeros(v.size, dtype=np.uint64)
        return np.minimum((v - lo) / (hi - lo) * 65536.0, 65535.0).astype(np.uint64)

    code = _spread_bits(quantise(locs.xs)) | (_spread_bits(quantise(locs.ys)) << np.uint64(1))
    return np.argsort(code, kind="stable")
