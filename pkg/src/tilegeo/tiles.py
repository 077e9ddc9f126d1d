"""Tiled symmetric matrices and the factorizations that run on them.

A :class:`TiledMatrix` stores the lower triangle of an ``n x n`` symmetric
matrix as a grid of tiles. Each tile is dense, identically zero (diagonal
super tile truncation) or a low-rank product ``u @ v`` (tile low-rank
compression). Diagonal tiles are always dense. The last tile row/column may
be ragged; its size is carried by the layout rather than padded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular as _dense_solve_triangular

from ._backend import kernels
from .errors import SingularMatrixError
from .scheduler import TaskGraph, run_independent


class TileKind(Enum):
    DENSE = 0
    ZERO = 1
    LOW_RANK = 2


class Tile:
    """One block of a tiled matrix."""

    __slots__ = ("kind", "shape", "data", "u", "v")

    def __init__(self, kind, shape, data=None, u=None, v=None):
        self.kind = kind
        self.shape = tuple(shape)
        self.data = data
        self.u = u
        self.v = v

    @classmethod
    def dense(cls, data) -> Tile:
        data = np.asfortranarray(data, dtype=np.float64)
        return cls(TileKind.DENSE, data.shape, data=data)

    @classmethod
    def zero(cls, shape) -> Tile:
        return cls(TileKind.ZERO, shape)

    @classmethod
    def low_rank(cls, u, v) -> Tile:
        u = np.asfortranarray(u, dtype=np.float64)
        v = np.asfortranarray(v, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[0]:
            raise ValueError(f"incompatible low-rank factors {u.shape} and {v.shape}")
        return cls(TileKind.LOW_RANK, (u.shape[0], v.shape[1]), u=u, v=v)

    @property
    def rank(self) -> int:
        if self.kind is TileKind.DENSE:
            return min(self.shape)
        if self.kind is TileKind.ZERO:
            return 0
        return self.u.shape[1]

    def to_dense(self) -> np.ndarray:
        if self.kind is TileKind.DENSE:
            return np.array(self.data)
        if self.kind is TileKind.ZERO:
            return np.zeros(self.shape)
        return self.u @ self.v

    def copy(self) -> Tile:
        return Tile(
            self.kind,
            self.shape,
            data=None if self.data is None else self.data.copy(order="F"),
            u=None if self.u is None else self.u.copy(order="F"),
            v=None if self.v is None else self.v.copy(order="F"),
        )

    def __repr__(self):
        return f"Tile({self.kind.name}, shape={self.shape}, rank={self.rank})"


@dataclass(frozen=True)
class TileLayout:
    """Partition of ``n`` rows into ``nt`` tiles of size ``ts`` (last one ragged)."""

    n: int
    ts: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"matrix order must be positive, got {self.n}")
        if not 1 <= self.ts <= self.n:
            raise ValueError(f"tile size must lie in [1, {self.n}], got {self.ts}")

    @classmethod
    def create(cls, n, ts) -> TileLayout:
        """Layout with ``ts`` clamped to ``n``."""
        if int(ts) < 1:
            raise ValueError(f"tile size must be positive, got {ts}")
        return cls(int(n), min(int(ts), int(n)))

    @property
    def nt(self) -> int:
        return -(-self.n // self.ts)

    def start(self, i) -> int:
        return i * self.ts

    def size(self, i) -> int:
        return min(self.ts, self.n - i * self.ts)

    def slice(self, i) -> slice:
        return slice(i * self.ts, i * self.ts + self.size(i))


class ModeKind(Enum):
    EXACT = 0
    DST = 1
    TLR = 2


@dataclass(frozen=True)
class MatrixMode:
    """Storage mode: exact, diagonal super tile with a bandwidth, or tile low-rank."""

    kind: ModeKind = ModeKind.EXACT
    bandwidth: int | None = None
    accuracy: float | None = None

    @classmethod
    def exact(cls) -> MatrixMode:
        return cls(ModeKind.EXACT)

    @classmethod
    def dst(cls, bandwidth=1) -> MatrixMode:
        if int(bandwidth) < 0:
            raise ValueError(f"bandwidth must be nonnegative, got {bandwidth}")
        return cls(ModeKind.DST, bandwidth=int(bandwidth))

    @classmethod
    def tlr(cls, accuracy) -> MatrixMode:
        if not accuracy > 0:
            raise ValueError(f"accuracy must be positive, got {accuracy}")
        return cls(ModeKind.TLR, accuracy=float(accuracy))

    def keeps(self, i, j) -> bool:
        """Whether tile (i, j) is stored (not annihilated) under this mode."""
        return self.kind is not ModeKind.DST or abs(i - j) <= self.bandwidth

    def __str__(self):
        if self.kind is ModeKind.DST:
            return f"dst(bandwidth={self.bandwidth})"
        if self.kind is ModeKind.TLR:
            return f"tlr(accuracy={self.accuracy:g})"
        return "exact"


class TiledMatrix:
    """Lower-triangular grid of tiles; ``tiles[i][j]`` exists for ``j <= i``."""

    def __init__(self, layout: TileLayout, tiles, mode: MatrixMode = MatrixMode(), factored=False):
        self.layout = layout
        self.tiles = tiles
        self.mode = mode
        self.factored = factored

    @classmethod
    def empty(cls, layout, mode=MatrixMode()) -> TiledMatrix:
        """Matrix with every stored tile allocated as dense zeros."""
        tiles = []
        for i in range(layout.nt):
            row = []
            for j in range(i + 1):
                shape = (layout.size(i), layout.size(j))
                if mode.keeps(i, j):
                    row.append(Tile.dense(np.zeros(shape, order="F")))
                else:
                    row.append(Tile.zero(shape))
            tiles.append(row)
        return cls(layout, tiles, mode)

    @classmethod
    def from_dense(cls, a, ts, mode=MatrixMode()) -> TiledMatrix:
        """Tile the lower triangle of the symmetric matrix ``a``."""
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square matrix")
        layout = TileLayout.create(a.shape[0], ts)
        m = cls.empty(layout, MatrixMode.exact())
        for i in range(layout.nt):
            for j in range(i + 1):
                m.tiles[i][j].data[...] = a[layout.slice(i), layout.slice(j)]
        if mode.kind is ModeKind.DST:
            return dst_truncate(m, mode.bandwidth)
        if mode.kind is ModeKind.TLR:
            return tlr_compress(m, mode.accuracy)
        return m

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def nt(self) -> int:
        return self.layout.nt

    def tile(self, i, j) -> Tile:
        return self.tiles[i][j]

    def to_dense(self) -> np.ndarray:
        """Dense copy: the full symmetric matrix, or the lower factor once factored."""
        lay = self.layout
        out = np.zeros((lay.n, lay.n))
        for i in range(lay.nt):
            for j in range(i + 1):
                block = self.tiles[i][j].to_dense()
                if i == j:
                    block = np.tril(block)
                out[lay.slice(i), lay.slice(j)] = block
        if not self.factored:
            out = out + np.tril(out, -1).T
        return out

    def copy(self) -> TiledMatrix:
        tiles = [[t.copy() for t in row] for row in self.tiles]
        return TiledMatrix(self.layout, tiles, self.mode, self.factored)

    def ranks(self) -> np.ndarray:
        """``nt x nt`` array of tile ranks (lower triangle; -1 above)."""
        r = np.full((self.nt, self.nt), -1, dtype=int)
        for i in range(self.nt):
            for j in range(i + 1):
                r[i, j] = self.tiles[i][j].rank
        return r

    def zero_tiles(self) -> set:
        return {
            (i, j)
            for i in range(self.nt)
            for j in range(i + 1)
            if self.tiles[i][j].kind is TileKind.ZERO
        }

    def dump(self, path) -> None:
        """Write the little-endian binary tile dump (see :func:`load_tiled`)."""
        with open(path, "wb") as fh:
            param = 0.0
            if self.mode.kind is ModeKind.DST:
                param = float(self.mode.bandwidth)
            elif self.mode.kind is ModeKind.TLR:
                param = self.mode.accuracy
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqqdq", self.n, self.layout.ts, self.mode.kind.value,
                                 param, int(self.factored)))
            for i in range(self.nt):
                for j in range(i + 1):
                    t = self.tiles[i][j]
                    fh.write(struct.pack("<qq", t.kind.value, t.rank))
                    if t.kind is TileKind.DENSE:
                        fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
                    elif t.kind is TileKind.LOW_RANK:
                        fh.write(np.ascontiguousarray(t.u, dtype="<f8").tobytes())
                        fh.write(np.ascontiguousarray(t.v, dtype="<f8").tobytes())


_MAGIC = b"TGTM"


def load_tiled(path) -> TiledMatrix:
    """Read a dump written by :meth:`TiledMatrix.dump`.

    Layout: 4-byte magic ``TGTM``; int64 ``n``, int64 ``ts``, int64 mode
    (0 exact, 1 DST, 2 TLR), float64 mode parameter (bandwidth or accuracy),
    int64 factored flag; then for each tile in row-major lower-triangular
    order an int64 variant tag (0 dense, 1 zero, 2 low-rank) and int64 rank,
    followed by the dense block, nothing, or ``u`` then ``v``, all row-major
    float64.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a tiled matrix dump")
        n, ts, mode_code, param, factored = struct.unpack("<qqqdq", fh.read(40))
        kind = ModeKind(mode_code)
        if kind is ModeKind.DST:
            mode = MatrixMode.dst(int(param))
        elif kind is ModeKind.TLR:
            mode = MatrixMode.tlr(param)
        else:
            mode = MatrixMode.exact()
        layout = TileLayout(n, ts)

        def read(shape):
            count = shape[0] * shape[1]
            buf = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            return np.asfortranarray(buf, dtype=np.float64)

        tiles = []
        for i in range(layout.nt):
            row = []
            for j in range(i + 1):
                tag, rank = struct.unpack("<qq", fh.read(16))
                shape = (layout.size(i), layout.size(j))
                tk = TileKind(tag)
                if tk is TileKind.DENSE:
                    row.append(Tile.dense(read(shape)))
                elif tk is TileKind.ZERO:
                    row.append(Tile.zero(shape))
                else:
                    u = read((shape[0], rank))
                    v = read((rank, shape[1]))
                    row.append(Tile.low_rank(u, v))
            tiles.append(row)
    return TiledMatrix(layout, tiles, mode, bool(factored))


# ---------------------------------------------------------------------------
# Structural transforms


def dst_truncate(a: TiledMatrix, bandwidth: int = 1) -> TiledMatrix:
    """Copy of ``a`` with every tile farther than ``bandwidth`` from the diagonal zeroed."""
    mode = MatrixMode.dst(bandwidth)
    tiles = []
    for i in range(a.nt):
        row = []
        for j in range(i + 1):
            t = a.tiles[i][j]
            row.append(t.copy() if mode.keeps(i, j) else Tile.zero(t.shape))
        tiles.append(row)
    return TiledMatrix(a.layout, tiles, mode, a.factored)


def truncation_rank(s, accuracy) -> int:
    """Smallest rank k >= 1 whose discarded singular values satisfy
    ``norm(s[k:]) <= accuracy * norm(s)``."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return 1
    tail = np.sqrt(np.cumsum((s * s)[::-1])[::-1])
    total = tail[0]
    ok = np.nonzero(tail <= accuracy * total)[0]
    k = int(ok[0]) if ok.size else s.size
    return max(1, k)


def compress_block(block, accuracy) -> Tile:
    """Truncated SVD of a dense block at relative Frobenius ``accuracy``."""
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    k = truncation_rank(s, accuracy)
    return Tile.low_rank(u[:, :k] * s[:k], vt[:k])


def tlr_compress(a: TiledMatrix, accuracy: float, workers: int = 1) -> TiledMatrix:
    """Tile low-rank copy of an exact matrix: off-diagonal tiles become ``u @ v``."""
    if a.mode.kind is not ModeKind.EXACT:
        raise ValueError(f"tlr_compress expects an exact matrix, got mode {a.mode}")
    if not accuracy > 0:
        raise ValueError(f"accuracy must be positive, got {accuracy}")
    tiles = [[None] * (i + 1) for i in range(a.nt)]

    def work(i, j):
        t = a.tiles[i][j]
        tiles[i][j] = t.copy() if i == j else compress_block(t.to_dense(), accuracy)

    run_independent(
        [lambda i=i, j=j: work(i, j) for i in range(a.nt) for j in range(i + 1)], workers
    )
    return TiledMatrix(a.layout, tiles, MatrixMode.tlr(accuracy), a.factored)


# ---------------------------------------------------------------------------
# Factorizations


def _potrf(a: TiledMatrix, k):
    info = kernels.potrf_tile(a.tiles[k][k].data)
    if info:
        row = a.layout.start(k) + info - 1
        raise SingularMatrixError(
            f"matrix is computationally singular: non-positive pivot at row {row} "
            f"in diagonal tile ({k}, {k})",
            tile=(k, k),
        )


def _trsm(a: TiledMatrix, i, k):
    t = a.tiles[i][k]
    lkk = a.tiles[k][k].data
    if t.kind is TileKind.DENSE:
        kernels.trsm_tile(lkk, t.data)
    else:
        kernels.trsm_tile(lkk, t.v)


def _syrk(a: TiledMatrix, i, k):
    t = a.tiles[i][k]
    c = a.tiles[i][i].data
    if t.kind is TileKind.DENSE:
        kernels.syrk_tile(t.data, c)
    else:
        w = np.asfortranarray(t.u @ (t.v @ t.v.T))
        kernels.gemm_tile(w, t.u, c)


def _gemm(a: TiledMatrix, i, j, k):
    ta, tb, tc = a.tiles[i][k], a.tiles[j][k], a.tiles[i][j]
    if tc.kind is TileKind.LOW_RANK:
        _low_rank_update(tc, ta, tb, a.mode.accuracy)
        return
    if ta.kind is TileKind.DENSE and tb.kind is TileKind.DENSE:
        kernels.gemm_tile(ta.data, tb.data, tc.data)
        return
    tc.data -= ta.to_dense() @ tb.to_dense().T


def _low_rank_update(tc: Tile, ta: Tile, tb: Tile, accuracy):
    """``tc := tc - ta @ tb.T`` for low-rank operands, recompressed to ``accuracy``."""
    ua, va = _factors(ta)
    ub, vb = _factors(tb)
    w = (va @ vb.T) @ ub.T
    big_u = np.hstack([tc.u, -ua])
    big_v = np.vstack([tc.v, w])
    qu, ru = np.linalg.qr(big_u)
    qv, rv = np.linalg.qr(big_v.T)
    p, s, qt = np.linalg.svd(ru @ rv.T)
    k = min(truncation_rank(s, accuracy), min(tc.shape))
    tc.u = np.asfortranarray(qu @ (p[:, :k] * s[:k]))
    tc.v = np.asfortranarray((qv @ qt[:k].T).T)


def _factors(t: Tile):
    if t.kind is TileKind.LOW_RANK:
        return t.u, t.v
    d = t.to_dense()
    return d, np.eye(d.shape[1])


def _build_cholesky_graph(a: TiledMatrix) -> TaskGraph:
    nt = a.nt
    graph = TaskGraph()

    def nonzero(i, j):
        return a.tiles[i][j].kind is not TileKind.ZERO

    for k in range(nt):
        graph.submit(_potrf, a, k, writes=[(k, k)])
        for i in range(k + 1, nt):
            if nonzero(i, k):
                graph.submit(_trsm, a, i, k, reads=[(k, k)], writes=[(i, k)])
        for i in range(k + 1, nt):
            if not nonzero(i, k):
                continue
            graph.submit(_syrk, a, i, k, reads=[(i, k)], writes=[(i, i)])
            for j in range(k + 1, i):
                if not nonzero(j, k):
                    continue
                if not nonzero(i, j):
                    # fill-in outside the stored pattern
                    a.tiles[i][j] = Tile.dense(np.zeros(a.tiles[i][j].shape, order="F"))
                graph.submit(_gemm, a, i, j, k, reads=[(i, k), (j, k)], writes=[(i, j)])
    return graph


def cholesky_in_place(a: TiledMatrix, workers: int = 1) -> TiledMatrix:
    """Right-looking tiled Cholesky; ``a`` is overwritten with its lower factor.

    Exact and DST matrices use dense tile kernels (zero tiles are skipped);
    TLR matrices are routed to :func:`tlr_cholesky`.
    """
    if a.factored:
        raise ValueError("matrix is already factored")
    if a.mode.kind is ModeKind.TLR:
        return tlr_cholesky(a, workers)
    _build_cholesky_graph(a).run(workers)
    a.factored = True
    return a


def tlr_cholesky(a: TiledMatrix, workers: int = 1) -> TiledMatrix:
    """Tiled Cholesky with low-rank arithmetic on the off-diagonal tiles.

    Follows the same task graph as the dense factorization. Triangular solves
    act on the ``v`` factor only, symmetric updates of diagonal tiles are
    formed from the factors, and each low-rank update is added by stacking
    factors, orthogonalising both sides with QR and truncating an SVD of the
    small core at the matrix accuracy.
    """
    if a.mode.kind is not ModeKind.TLR:
        raise ValueError(f"tlr_cholesky expects a TLR matrix, got mode {a.mode}")
    if a.factored:
        raise ValueError("matrix is already factored")
    _build_cholesky_graph(a).run(workers)
    a.factored = True
    return a


def factorize(a: TiledMatrix, workers: int = 1) -> TiledMatrix:
    """Cholesky factorization in whichever mode ``a`` is stored."""
    return cholesky_in_place(a, workers)


# ---------------------------------------------------------------------------
# Operations with a factor


class Side(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


def _check_factor(l: TiledMatrix):
    if not l.factored:
        raise ValueError("expected a Cholesky factor")


def _diag_check(block, i):
    d = np.diagonal(block)
    if np.any(d == 0.0) or not np.all(np.isfinite(d)):
        raise SingularMatrixError(f"zero diagonal in factor tile ({i}, {i})", tile=(i, i))


def _apply_lower(t: Tile, x):
    if t.kind is TileKind.DENSE:
        return t.data @ x
    return t.u @ (t.v @ x)


def _apply_lower_t(t: Tile, x):
    if t.kind is TileKind.DENSE:
        return t.data.T @ x
    return t.v.T @ (t.u.T @ x)


def _forward(l: TiledMatrix, y):
    lay = l.layout
    for i in range(lay.nt):
        si = lay.slice(i)
        for j in range(i):
            t = l.tiles[i][j]
            if t.kind is not TileKind.ZERO:
                y[si] -= _apply_lower(t, y[lay.slice(j)])
        lii = l.tiles[i][i].data
        _diag_check(lii, i)
        y[si] = _dense_solve_triangular(lii, y[si], lower=True, check_finite=False)


def _backward(l: TiledMatrix, x):
    lay = l.layout
    for i in reversed(range(lay.nt)):
        si = lay.slice(i)
        for j in range(i + 1, lay.nt):
            t = l.tiles[j][i]
            if t.kind is not TileKind.ZERO:
                x[si] -= _apply_lower_t(t, x[lay.slice(j)])
        lii = l.tiles[i][i].data
        _diag_check(lii, i)
        x[si] = _dense_solve_triangular(lii, x[si], lower=True, trans="T", check_finite=False)


def solve_triangular(l: TiledMatrix, b, side=Side.FORWARD, workers: int = 1) -> np.ndarray:
    """Solve ``L y = b`` (forward) or ``L.T x = b`` (backward) with a tiled factor.

    ``b`` may be a vector or an ``n x m`` matrix of right-hand sides; matrix
    right-hand sides are split into column blocks solved in parallel.
    """
    _check_factor(l)
    side = Side(side)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != l.n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {l.n}")
    out = np.array(b, dtype=np.float64, order="F")
    sweep = _forward if side is Side.FORWARD else _backward
    if out.ndim == 1 or workers <= 1 or out.shape[1] < 2:
        sweep(l, out)
        return out
    blocks = np.array_split(np.arange(out.shape[1]), min(workers, out.shape[1]))

    def work(cols):
        part = np.array(out[:, cols], order="F")
        sweep(l, part)
        out[:, cols] = part

    run_independent([lambda c=c: work(c) for c in blocks], workers)
    return out


def log_det_from_factor(l: TiledMatrix) -> float:
    """``log|A|`` from its Cholesky factor, ``2 * sum(log L_ii)`` summed left to right."""
    _check_factor(l)
    total = 0.0
    for i in range(l.nt):
        d = np.diagonal(l.tiles[i][i].data)
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            raise SingularMatrixError(
                f"non-positive diagonal in factor tile ({i}, {i})", tile=(i, i)
            )
        for v in np.log(d):
            total += float(v)
    return 2.0 * total


def lower_matvec(l: TiledMatrix, x, workers: int = 1) -> np.ndarray:
    """``L @ x`` for a tiled lower factor; row tiles are computed in parallel."""
    _check_factor(l)
    x = np.asarray(x, dtype=np.float64)
    lay = l.layout
    out = np.zeros_like(x)

    def row(i):
        si = lay.slice(i)
        acc = np.zeros_like(x[si])
        for j in range(i + 1):
            t = l.tiles[i][j]
            if t.kind is not TileKind.ZERO:
                acc += _apply_lower(t, x[lay.slice(j)])
        out[si] = acc

    run_independent([lambda i=i: row(i) for i in range(lay.nt)], workers)
    return out


def frobenius_norm(a: TiledMatrix) -> float:
    """Frobenius norm of the full symmetric matrix represented by ``a``."""
    total = 0.0
    for i in range(a.nt):
        for j in range(i + 1):
            t = a.tiles[i][j]
            if t.kind is TileKind.ZERO:
                continue
            block = t.to_dense()
            if i == j:
                total += float(np.sum(np.tril(block) ** 2) + np.sum(np.tril(block, -1) ** 2))
            else:
                total += 2.0 * float(np.sum(block**2))
    return math.sqrt(total)
