"""
Exact sampling of centred Gaussian paths on uniform grids.

Paths are generated in fixed-size blocks.  Block ``b`` draws its normals from
its own substream ``SeedSequence(seed, spawn_key=(tag, b))``, so the output
depends only on ``(seed, grid, kernel, n_paths)`` and never on how many worker
threads consume the blocks.
"""

from __future__ import annotations

import enum
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .kernels import Family, KernelSpec, covariance, fbm

log = logging.getLogger(__name__)

BLOCK_SIZE = 512

# substream tags
NORMALS = 0
AUX = 1


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GridSpec:
    t_start: float
    t_end: float
    n_points: int

    def __post_init__(self):
        if not (self.t_start >= 0 and self.t_end > self.t_start):
            raise ValueError(f"grid needs 0 <= t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError("grid needs an integer n_points >= 2")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self):
        return (self.t_end - self.t_start) / (self.n_points - 1)

    @property
    def points(self):
        return np.linspace(self.t_start, self.t_end, self.n_points)

    def refine(self):
        """The nested grid with half the spacing."""
        return GridSpec(self.t_start, self.t_end, 2 * self.n_points - 1)

    def to_dict(self):
        return {"t_start": self.t_start, "t_end": self.t_end, "n_points": self.n_points}

    @classmethod
    def from_spacing(cls, t_end, spacing, t_start=0.0):
        n = int(round((t_end - t_start) / spacing)) + 1
        return cls(t_start, t_start + (n - 1) * spacing, n)


class Construction(str, enum.Enum):
    RAW_Y = "RAW_Y"
    RISK_X = "RISK_X"
    FBM_FAST = "FBM_FAST"


@dataclass
class Factorization:
    """Lower-triangular root of a Gram matrix.

    Rows with exactly zero variance (the origin for every family here) are
    pinned to zero and excluded from ``root``; ``active`` marks the rest.
    """

    grid: GridSpec | None
    root: np.ndarray
    active: np.ndarray
    jitter_used: float = 0.0

    @property
    def n_points(self):
        return self.active.size

    def reconstruct(self):
        full = np.zeros((self.n_points, self.n_points))
        idx = np.flatnonzero(self.active)
        full[np.ix_(idx, idx)] = self.root @ self.root.T
        return full


@dataclass
class PathBatch:
    grid: GridSpec
    values: np.ndarray
    seed: int
    construction: Construction
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.values.shape[0]

    def header(self):
        return {
            "grid": self.grid.to_dict(),
            "seed": int(self.seed),
            "construction": self.construction.value,
            "n_paths": int(self.values.shape[0]),
            "n_points": int(self.values.shape[1]),
            "dtype": "<f8",
            "order": "row-major",
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_binary(self, path):
        """JSON header line, then the values as little-endian row-major float64."""
        head = json.dumps(self.header(), sort_keys=True).encode() + b"\n"
        with open(path, "wb") as fh:
            fh.write(len(head).to_bytes(8, "little"))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path):
        with open(path, "rb") as fh:
            n = int.from_bytes(fh.read(8), "little")
            head = json.loads(fh.read(n))
            data = np.frombuffer(fh.read(), dtype="<f8")
        values = data.reshape(head["n_paths"], head["n_points"]).copy()
        return cls(GridSpec(**head["grid"]), values, head["seed"], Construction(head["construction"]), head.get("meta", {}))

    def to_csv(self, path, max_paths=1000):
        if self.n_paths > max_paths:
            raise ValueError(f"CSV export is for small batches (<= {max_paths} paths)")
        buf = io.StringIO()
        t = self.grid.points
        buf.write("path," + ",".join(repr(float(x)) for x in t) + "\r\n")
        for i, row in enumerate(self.values):
            buf.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\r\n")
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def block_rng(seed, block, tag=NORMALS):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def block_ranges(n_paths, block_size=BLOCK_SIZE):
    return [(b, b * block_size, min(n_paths, (b + 1) * block_size)) for b in range(math.ceil(n_paths / block_size))]


def map_blocks(fn, n_paths, threads=1, block_size=BLOCK_SIZE):
    """Apply ``fn(block, start, stop)`` to every block, results in block order."""
    ranges = block_ranges(n_paths, block_size)
    if threads <= 1 or len(ranges) == 1:
        return [fn(*r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


# ---------------------------------------------------------------------------
# dense route
# ---------------------------------------------------------------------------

def _grid_points(grid):
    if isinstance(grid, GridSpec):
        return grid.points
    pts = np.asarray(grid, dtype=float)
    if pts.ndim != 1 or pts.size < 1:
        raise ValueError("grid must be a GridSpec or a 1-d array of points")
    if np.unique(pts).size != pts.size:
        raise ValueError("grid has duplicate points")
    return pts


def build_gram(spec: KernelSpec, grid):
    t = _grid_points(grid)
    g = covariance(spec, t[:, None], t[None, :])
    return 0.5 * (g + g.T)


_JITTER_START = 1e-12
_JITTER_STOP = 1e-6


def factorize(gram, grid=None) -> Factorization:
    """Cholesky root with escalating diagonal jitter.

    Jitter goes 1e-12, 1e-11, ..., 1e-6 times ``trace/n`` of the active block.
    """
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("Gram matrix must be square")
    if not np.allclose(gram, gram.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(gram).max())):
        raise ValueError("Gram matrix is not symmetric")
    diag = np.diag(gram)
    active = diag != 0.0
    sub = gram[np.ix_(active, active)]
    n = sub.shape[0]
    if n == 0:
        return Factorization(grid, np.zeros((0, 0)), active, 0.0)
    scale = np.trace(sub) / n
    jitter = 0.0
    level = _JITTER_START
    while True:
        a = sub + jitter * np.eye(n) if jitter else sub
        root, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            if jitter:
                log.info("Cholesky needed jitter %.3g", jitter)
            return Factorization(grid, root, active, jitter)
        if level > _JITTER_STOP * (1 + 1e-9):
            pivot = int(np.flatnonzero(active)[info - 1]) if info > 0 else -1
            raise FactorizationError(
                f"Gram matrix indefinite after jitter {jitter:.3g}; failing pivot at grid index {pivot}"
            )
        jitter = level * scale
        level *= 10.0


def _dense_block(fact: Factorization, seed, block, n, tag=NORMALS):
    rng = block_rng(seed, block, tag)
    k = fact.root.shape[0]
    z = rng.standard_normal((n, k))
    out = np.zeros((n, fact.n_points))
    out[:, fact.active] = z @ fact.root.T
    return out


def draw(fact: Factorization, n_paths, seed, threads=1, grid=None) -> PathBatch:
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    grid = grid or fact.grid
    parts = map_blocks(lambda b, lo, hi: _dense_block(fact, seed, b, hi - lo), n_paths, threads)
    return PathBatch(grid, np.concatenate(parts), seed, Construction.RAW_Y)


# ---------------------------------------------------------------------------
# fast fBm via circulant embedding of fractional Gaussian noise
# ---------------------------------------------------------------------------

def _fgn_autocov(kappa, m, spacing):
    k = np.arange(m + 1, dtype=float)
    return 0.5 * spacing**kappa * (np.abs(k + 1) ** kappa + np.abs(k - 1) ** kappa - 2 * k**kappa)


@dataclass
class CirculantPlan:
    kappa: float
    grid: GridSpec
    sqrt_eig: np.ndarray | None
    fallback: Factorization | None = None

    @property
    def n_incr(self):
        return self.grid.n_points - 1


def circulant_plan(kappa, grid: GridSpec) -> CirculantPlan:
    if grid.t_start != 0.0:
        raise ValueError("fast fBm needs a grid starting at 0")
    if not 0.0 < kappa < 2.0:
        raise ValueError("fast fBm needs kappa in (0, 2)")
    m = grid.n_points - 1
    if kappa == 1.0:
        return CirculantPlan(kappa, grid, None)
    acov = _fgn_autocov(kappa, m, grid.spacing)
    row = np.concatenate([acov, acov[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        log.warning("circulant embedding not nonnegative (min eigenvalue %.3g); using dense factorization", eig.min())
        return CirculantPlan(kappa, grid, None, factorize(build_gram(fbm(kappa), grid), grid))
    eig = np.maximum(eig, 0.0)
    return CirculantPlan(kappa, grid, np.sqrt(eig / eig.size))


def _fast_block(plan: CirculantPlan, seed, block, n, tag=NORMALS):
    if plan.fallback is not None:
        return _dense_block(plan.fallback, seed, block, n, tag)
    rng = block_rng(seed, block, tag)
    m = plan.n_incr
    out = np.zeros((n, m + 1))
    if plan.sqrt_eig is None:
        incr = rng.standard_normal((n, m)) * math.sqrt(plan.grid.spacing)
    else:
        half = (n + 1) // 2
        size = plan.sqrt_eig.size
        z = rng.standard_normal((half, size)) + 1j * rng.standard_normal((half, size))
        y = np.fft.fft(plan.sqrt_eig * z, axis=1)[:, :m]
        incr = np.concatenate([y.real, y.imag])[:n]
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def draw_fbm_fast(kappa, grid: GridSpec, n_paths, seed, threads=1) -> PathBatch:
    plan = circulant_plan(kappa, grid)
    parts = map_blocks(lambda b, lo, hi: _fast_block(plan, seed, b, hi - lo), n_paths, threads)
    return PathBatch(grid, np.concatenate(parts), seed, Construction.FBM_FAST, {"kappa": kappa})


# ---------------------------------------------------------------------------
# generic dispatch used by the estimators
# ---------------------------------------------------------------------------

class PathSource:
    """Block-wise sampler for one kernel on one grid.

    Picks the cheapest exact route: rank one for fBm with kappa = 2, circulant
    embedding for fBm on grids from 0, dense Cholesky otherwise.
    """

    def __init__(self, spec: KernelSpec, grid: GridSpec):
        self.spec = spec
        self.grid = grid
        self._gram = None
        if spec.family is Family.FBM and spec["kappa"] == 2.0:
            self.route = "rank_one"
        elif spec.family is Family.FBM and grid.t_start == 0.0:
            self.route = "circulant"
            self._plan = circulant_plan(spec["kappa"], grid)
        else:
            self.route = "dense"
            self._gram = build_gram(spec, grid)
            self._fact = factorize(self._gram, grid)

    @property
    def gram(self):
        if self._gram is None:
            self._gram = build_gram(self.spec, self.grid)
        return self._gram

    @property
    def jitter_used(self):
        return self._fact.jitter_used if self.route == "dense" else 0.0

    def block(self, seed, block, n, tag=NORMALS):
        if self.route == "rank_one":
            z = block_rng(seed, block, tag).standard_normal(n)
            return z[:, None] * self.grid.points[None, :]
        if self.route == "circulant":
            return _fast_block(self._plan, seed, block, n, tag)
        return _dense_block(self._fact, seed, block, n, tag)


def draw_paths(spec: KernelSpec, grid: GridSpec, n_paths, seed, threads=1) -> PathBatch:
    src = PathSource(spec, grid)
    parts = map_blocks(lambda b, lo, hi: src.block(seed, b, hi - lo), n_paths, threads)
    construction = Construction.RAW_Y if src.route == "dense" else Construction.FBM_FAST
    return PathBatch(grid, np.concatenate(parts), seed, construction, {"route": src.route})


class RiskSource:
    """Block-wise sampler of ``X(t) = Y(1) - Y(t)`` on a grid ending at 1."""

    def __init__(self, spec: KernelSpec, grid: GridSpec):
        if grid.t_end != 1.0 or grid.t_start < 0.0:
            raise ValueError("risk-process grids must lie in [0, 1] and end at t = 1")
        self.spec = spec
        self.grid = grid
        self._y = PathSource(spec, grid)

    def block(self, seed, block, n, tag=NORMALS):
        y = self._y.block(seed, block, n, tag)
        return y[:, -1:] - y

    def covariance_column(self, j):
        """``Cov(X(t), X(t_j))`` over the grid."""
        t = self.grid.points
        tj = t[j]
        s = self.spec
        return (
            covariance(s, 1.0, 1.0) - covariance(s, t, 1.0) - covariance(s, tj, 1.0) + covariance(s, t, tj)
        )

    def variances(self):
        t = self.grid.points
        v = covariance(self.spec, t, t) + 1.0 - 2.0 * covariance(self.spec, t, 1.0)
        v = np.maximum(v, 0.0)
        v[-1] = 0.0
        return v


def draw_risk_x(spec: KernelSpec, grid: GridSpec, n_paths, seed, threads=1) -> PathBatch:
    src = RiskSource(spec, grid)
    parts = map_blocks(lambda b, lo, hi: src.block(seed, b, hi - lo), n_paths, threads)
    return PathBatch(grid, np.concatenate(parts), seed, Construction.RISK_X, {"kernel": spec.to_dict()})
