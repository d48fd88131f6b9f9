"""
Monte Carlo estimation of Berman constants.

For a fixed path ``f(t) = sqrt(2) zeta(t) - Var zeta(t) - h(t)`` the weighted
occupation measure of ``{f + y > 0}`` is nondecreasing in ``y``, so the
``y``-integral in the definition collapses to ``exp(-y*)`` with ``y*`` the
critical level at which the measure first exceeds ``x``.  The constant is the
expectation of that quantity.

Two estimators of that expectation are offered.

``direct``
    Average ``exp(-y*)`` over plain paths.  Its variance grows roughly like
    ``exp(T)`` for unit-scale drifts, so it is only usable on short horizons.
``tilted`` (default)
    Write ``exp(-y*) = sum_J c_J exp(g_J) exp(-y*) / sum_j c_j exp(g_j)`` with
    ``g = sqrt(2) zeta - Var zeta``, ``c_j = w_j exp(-h_j)``, and move the factor
    ``exp(g_J)`` into the measure.  Under that tilt ``zeta`` is shifted by
    ``sqrt(2) R(., t_J)``.  Drawing ``J`` with probability proportional to
    ``c_J`` gives an unbiased estimator bounded by ``sum(c) / min(w)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import logsumexp

from .kernels import KernelSpec, covariance, fbm, meta
from .sampler import AUX, GridSpec, PathSource, block_rng, map_blocks
from .sojourn import LEBESGUE, WeightSpec

log = logging.getLogger(__name__)

CUTOFF_LEVEL = 40.0
MAX_DENSE_POINTS = 6000
TIE_RTOL = 1e-9


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# drifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    """A drift ``h(t) = sum_i coef_i * t**exponent_i``; no terms means zero."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple((float(c), float(e)) for c, e in self.terms if c != 0.0)
        for _, e in terms:
            if not e > 0:
                raise ValueError("drift exponents must be positive")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def zero(cls):
        return cls(())

    @classmethod
    def power(cls, coef, exponent):
        return cls(((coef, exponent),))

    def __add__(self, other):
        return DriftSpec(self.terms + other.terms)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c, e in self.terms:
            out = out + c * np.power(t, e)
        return out

    @property
    def nondecreasing(self):
        return all(c >= 0 for c, _ in self.terms)

    @property
    def is_zero(self):
        return not self.terms

    def to_dict(self):
        return {"terms": [[c, e] for c, e in self.terms]}

    @classmethod
    def from_dict(cls, obj):
        return cls(tuple(tuple(t) for t in obj.get("terms", [])))


# ---------------------------------------------------------------------------
# critical level
# ---------------------------------------------------------------------------

def critical_level(f, x, weights):
    """``y* = inf{y : sum_j w_j 1(f_j + y > 0) > x}`` for one discrete path.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    f = np.asarray(f, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), f.shape)
    out = critical_levels(f[None, :], np.atleast_1d(x), w)[0]
    return out[0] if np.ndim(x) == 0 else out


def critical_levels(F, xs, weights):
    """Row-wise :func:`critical_level` for a matrix of paths; shape ``(n, len(xs))``."""
    F = np.atleast_2d(F)
    xs = np.asarray(xs, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = float(w.sum())
    tol = TIE_RTOL * w.max()
    if np.any(xs < 0) or np.any(xs >= total - tol):
        raise DomainError(f"x must lie in [0, {total:g}) (total weighted mass of the grid)")
    out = np.empty((F.shape[0], xs.size))
    if np.all(xs == 0):
        out[:] = -F.max(axis=1)[:, None]
        return out
    order = np.argsort(-F, axis=1, kind="stable")
    fs = np.take_along_axis(F, order, axis=1)
    W = np.cumsum(w[order], axis=1)
    rows = np.arange(F.shape[0])
    # ties W(k) == x are common (x a multiple of the spacing); rounding must not decide them
    for i, x in enumerate(xs):
        k = (W <= x + tol).sum(axis=1)
        k = np.minimum(k, F.shape[1] - 1)
        out[:, i] = -fs[rows, k]
    return out


def critical_level_scan(f, x, weights, y_grid):
    """Brute-force ``y*``: the first ``y`` in an increasing ladder with measure > x."""
    f = np.asarray(f, dtype=float)
    w = np.asarray(weights, dtype=float)
    tol = TIE_RTOL * w.max()
    for y in y_grid:
        if w[f + y > 0].sum() > x + tol:
            return float(y)
    return math.inf


# ---------------------------------------------------------------------------
# queries and estimates
# ---------------------------------------------------------------------------

@dataclass
class BermanQuery:
    """Inputs for one Berman-constant estimate.

    ``zeta=None`` is the degenerate process ``zeta = 0``.  ``T=None`` means the
    half-line, cut where the drift (plus a quarter of the variance) reaches 40.
    """

    zeta: KernelSpec | None
    drift: DriftSpec = field(default_factory=DriftSpec.zero)
    x: float = 0.0
    T: float | None = 50.0
    weight: WeightSpec = LEBESGUE
    delta: float = 0.01
    n_paths: int = 10_000
    seed: int = 0
    normalized: bool = True
    method: str = "tilted"
    extrapolate: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.x < 0:
            raise DomainError("x must be >= 0")
        if self.T is not None and not self.T > 0:
            raise DomainError("T must be > 0")
        if not self.delta > 0:
            raise DomainError("delta must be > 0")
        if self.method not in ("tilted", "direct"):
            raise DomainError("method must be 'tilted' or 'direct'")


@dataclass
class BermanEstimate:
    value: float
    std_error: float
    x: float
    T: float
    delta: float
    n_paths: int
    normalized: bool
    method: str
    bound: float
    extrapolated: bool = False
    raw: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _local_kappa(spec):
    return 2.0 if spec is None else meta(spec).kappa


def horizon_cutoff(zeta, drift, level=CUTOFF_LEVEL):
    """Smallest ``T`` (to 1%) with ``h(T) + Var zeta(T) / 4 >= level``."""

    def g(t):
        v = 0.0 if zeta is None else float(covariance(zeta, t, t))
        return float(drift(t)) + v / 4.0

    if zeta is None and drift.is_zero:
        raise DomainError("zeta = 0 with zero drift has no finite half-line constant")
    hi = 1.0
    while g(hi) < level:
        hi *= 2.0
        if hi > 1e8:
            raise DomainError("drift and variance never reach the cutoff level")
    lo = 0.0
    while hi - lo > 0.01 * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) < level else (lo, mid)
    return hi


def _degenerate(q: BermanQuery, xs, T):
    """Exact constant for ``zeta = 0``: ``y* = h(eta^{-1}(x))`` for a nondecreasing drift."""
    vals = []
    total = float(q.weight.mass(0.0, T))
    for x in xs:
        if x >= total:
            raise DomainError(f"x must be below the total mass {total:g}")
        if q.drift.nondecreasing:
            y_star = float(q.drift(q.weight.inverse_mass(x)))
        else:
            grid = GridSpec.from_spacing(T, min(q.delta, T / 1000))
            w = q.weight.cell_weights(grid)
            y_star = float(critical_levels(-q.drift(grid.points[:-1])[None, :], [x], w)[0, 0])
        v = math.exp(-y_star)
        vals.append(v / T if q.normalized else v)
    return vals


def _run(q: BermanQuery, xs, grid: GridSpec, stream=0):
    """Per-path estimator values on one grid; shape ``(n_paths, len(xs))``."""
    t = grid.points
    tc = t[:-1]
    w = q.weight.cell_weights(grid)
    logw = np.log(w)
    h = q.drift(tc)
    src = PathSource(q.zeta, grid)
    if src.route == "dense" and grid.n_points > MAX_DENSE_POINTS:
        raise DomainError(f"{grid.n_points} grid points is too many for the dense sampler; raise delta")
    var = np.asarray(covariance(q.zeta, t, t), dtype=float)
    sqrt2 = math.sqrt(2.0)
    logc = logw - h
    log_sc = float(logsumexp(logc))
    cdf = np.cumsum(np.exp(logc - log_sc))
    cdf[-1] = 1.0
    tilted = q.method == "tilted"
    if src.route == "dense":
        gram = src.gram

    def block(b, lo, hi):
        n = hi - lo
        z = src.block(q.seed, b, n, tag=2 * stream)
        if tilted:
            J = np.searchsorted(cdf, block_rng(q.seed, b, tag=2 * stream + AUX).random(n), side="right")
            J = np.minimum(J, tc.size - 1)
            tj = tc[J]
            if src.route == "dense":
                col = gram[J, :]
            elif src.route == "rank_one":
                col = t[None, :] * tj[:, None]
            else:
                col = covariance(q.zeta, t[None, :], tj[:, None])
            z = z + sqrt2 * col
        f = sqrt2 * z[:, :-1] - var[:-1] - h
        y = critical_levels(f, xs, w)
        if tilted:
            log_i = logsumexp(f + logw, axis=1)
            return np.exp(log_sc - y - log_i[:, None])
        return np.exp(-y)

    vals = np.concatenate(map_blocks(block, q.n_paths, q.threads))
    bound = math.exp(log_sc) / w.min() if tilted else math.inf
    return vals, bound


def _summaries(vals, scale):
    n = vals.shape[0]
    mean = vals.mean(axis=0) * scale
    se = vals.std(axis=0, ddof=1) / math.sqrt(n) * scale if n > 1 else np.full(vals.shape[1], math.inf)
    return mean, se


def estimate_berman_curve(q: BermanQuery, xs: Sequence[float]):
    """Estimates at several ``x`` from the same paths (common random numbers).

    With ``q.extrapolate`` a second, independent run at half the spacing is
    combined by two-point Richardson extrapolation at the rate ``delta**(kappa/2)``
    of discretised suprema, ``kappa`` being the local exponent of ``zeta``.
    """
    xs = np.asarray(xs, dtype=float)
    T = q.T if q.T is not None else horizon_cutoff(q.zeta, q.drift)
    scale = 1.0 / T if q.normalized else 1.0
    if q.zeta is None:
        vals = _degenerate(q, xs, T)
        return [
            BermanEstimate(v, 0.0, float(x), T, q.delta, 0, q.normalized, "exact", v) for v, x in zip(vals, xs)
        ]
    grid = GridSpec.from_spacing(T, q.delta)
    vals, bound = _run(q, xs, grid)
    mean, se = _summaries(vals, scale)
    raw = [[{"delta": grid.spacing, "value": float(m), "std_error": float(s)}] for m, s in zip(mean, se)]
    if q.extrapolate:
        fine = grid.refine()
        vals_f, bound = _run(q, xs, fine, stream=1)
        mean_f, se_f = _summaries(vals_f, scale)
        r = 2.0 ** (_local_kappa(q.zeta) / 2.0)
        for i in range(xs.size):
            raw[i].append({"delta": fine.spacing, "value": float(mean_f[i]), "std_error": float(se_f[i])})
        mean = (r * mean_f - mean) / (r - 1.0)
        se = np.sqrt((r * se_f) ** 2 + se**2) / (r - 1.0)
    return [
        BermanEstimate(
            float(m), float(s), float(x), T, grid.spacing, q.n_paths, q.normalized, q.method,
            bound * scale, q.extrapolate, rw,
        )
        for m, s, x, rw in zip(mean, se, xs, raw)
    ]


def estimate_berman(q: BermanQuery) -> BermanEstimate:
    return estimate_berman_curve(q, [q.x])[0]


def berman_paths(q: BermanQuery, xs):
    """Raw per-path estimator values on the query's grid, for paired comparisons."""
    T = q.T if q.T is not None else horizon_cutoff(q.zeta, q.drift)
    vals, _ = _run(q, np.asarray(xs, dtype=float), GridSpec.from_spacing(T, q.delta))
    return vals / T if q.normalized else vals


# ---------------------------------------------------------------------------
# scaling identity
# ---------------------------------------------------------------------------

@dataclass
class ScalingRow:
    x: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    ratio: float
    ratio_se: float
    z: float
    passed: bool


@dataclass
class ScalingReport:
    spec: KernelSpec
    kappa: float
    c_Y: float
    T: float
    delta: float
    n_paths: int
    rows: list

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(), "kappa": self.kappa, "c_Y": self.c_Y, "T": self.T,
            "delta": self.delta, "n_paths": self.n_paths, "passed": self.passed,
            "rows": [asdict(r) for r in self.rows],
        }


def check_scaling_identity(spec: KernelSpec, xs, T=25.0, delta=0.01, n_paths=100_000, seed=0, threads=1, n_se=2.0):
    """Compare ``B_Y(x)`` with ``c**(1/k) B_{B_k}(c**(1/k) x)`` for a family with alpha = kappa.

    The fBm side runs on the time-rescaled window ``[0, c**(1/k) T]`` with
    spacing ``c**(1/k) delta``, i.e. the same number of grid points, so both
    sides carry the same discretisation.
    """
    m = meta(spec)
    if not math.isclose(m.alpha, m.kappa, rel_tol=0, abs_tol=1e-12):
        raise DomainError(f"scaling identity needs alpha == kappa, got alpha={m.alpha:g}, kappa={m.kappa:g}")
    k, c = m.kappa, m.c_Y
    s = c ** (1.0 / k)
    xs = np.asarray(xs, dtype=float)
    lhs = estimate_berman_curve(BermanQuery(spec, T=T, delta=delta, n_paths=n_paths, seed=seed, threads=threads), xs)
    rhs_q = BermanQuery(fbm(k), T=s * T, delta=s * delta, n_paths=n_paths, seed=seed + 1, threads=threads)
    rhs = estimate_berman_curve(rhs_q, s * xs)
    rows = []
    for x, le, re in zip(xs, lhs, rhs):
        rv, rse = s * re.value, s * re.std_error
        comb = math.hypot(le.std_error, rse)
        z = (le.value - rv) / comb if comb > 0 else math.inf
        ratio = le.value / rv
        ratio_se = ratio * math.hypot(le.std_error / le.value, rse / rv)
        rows.append(ScalingRow(float(x), le.value, le.std_error, rv, rse, ratio, ratio_se, z,
                               bool(abs(z) <= n_se and le.value > 0 and rv > 0)))
    return ScalingReport(spec, k, c, T, delta, n_paths, rows)


# ---------------------------------------------------------------------------
# tables of B_{B_kappa}(x)
# ---------------------------------------------------------------------------

TABLE_COLUMNS = ("kappa", "x", "value", "std_error", "T", "delta", "n_paths", "extrapolated")


@dataclass
class TableCurve:
    """Shape-preserving interpolant of ``x -> B_{B_kappa}(x)``.

    Constant below the first node, monotone cubic inside, and an exponential
    tail fitted to the last three nodes beyond ``x_max`` (zero if that fit
    does not decay).
    """

    kappa: float
    x: np.ndarray
    value: np.ndarray
    std_error: np.ndarray

    def __post_init__(self):
        self._fits = {}

    @property
    def x_max(self):
        return float(self.x[-1])

    def _fit(self, shift):
        if shift not in self._fits:
            v = np.maximum(self.value + shift * self.std_error, 0.0)
            v = np.minimum.accumulate(v)
            interp = PchipInterpolator(self.x, v, extrapolate=False)
            tail = v[-3:]
            if np.all(tail > 0):
                slope = np.polyfit(self.x[-3:], np.log(tail), 1)[0]
            else:
                slope = 0.0
            rate = -slope if slope < 0 else math.inf
            self._fits[shift] = (interp, float(v[0]), float(v[-1]), rate)
        return self._fits[shift]

    def __call__(self, x, shift=0.0):
        interp, first, last, rate = self._fit(shift)
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, self.x[0], self.x[-1])
        out = interp(inside)
        out = np.where(x < self.x[0], first, out)
        with np.errstate(over="ignore", invalid="ignore"):
            tail = last * np.exp(-rate * (x - self.x[-1])) if math.isfinite(rate) else np.zeros_like(x)
        out = np.where(x > self.x[-1], tail, out)
        return out[()] if out.ndim == 0 else out


@dataclass
class BermanTable:
    rows: list
    metadata: dict = field(default_factory=dict)

    @property
    def kappas(self):
        return sorted({r["kappa"] for r in self.rows})

    def curve(self, kappa) -> TableCurve:
        sel = [r for r in self.rows if math.isclose(r["kappa"], kappa, rel_tol=1e-12, abs_tol=1e-12)]
        if not sel:
            raise DomainError(f"Berman table has no kappa={kappa:g} column (available: {self.kappas})")
        sel.sort(key=lambda r: r["x"])
        return TableCurve(
            kappa,
            np.array([r["x"] for r in sel]),
            np.array([r["value"] for r in sel]),
            np.array([r["std_error"] for r in sel]),
        )

    def save(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(TABLE_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r["kappa"])), repr(float(r["x"])), repr(float(r["value"])),
                            repr(float(r["std_error"])), repr(float(r["T"])), repr(float(r["delta"])),
                            int(r["n_paths"]), str(bool(r["extrapolated"])).lower()])
        with open(sidecar_path(path), "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TABLE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: Berman table lacks columns {sorted(missing)}")
            for r in reader:
                rows.append({
                    "kappa": float(r["kappa"]), "x": float(r["x"]), "value": float(r["value"]),
                    "std_error": float(r["std_error"]), "T": float(r["T"]), "delta": float(r["delta"]),
                    "n_paths": int(r["n_paths"]), "extrapolated": r["extrapolated"].strip().lower() == "true",
                })
        side = sidecar_path(path)
        md = {}
        if os.path.exists(side):
            with open(side) as fh:
                md = json.load(fh)
        return cls(rows, md)


def sidecar_path(path):
    root, _ = os.path.splitext(str(path))
    return root + ".meta.json"


def build_berman_table(kappas, xs, T=50.0, delta=0.02, n_paths=20_000, seed=0, extrapolate=True, threads=1,
                       n_se=2.0, path=None) -> BermanTable:
    """Normalised ``B_{B_kappa}(x)`` for every ``kappa`` on a common ``x`` grid.

    All ``x`` in a column share paths, so each column is monotone before
    extrapolation; after it, increases larger than ``n_se`` standard errors
    are flagged in the metadata.
    """
    xs = np.asarray(sorted(xs), dtype=float)
    if xs[0] != 0.0:
        raise DomainError("the x grid must start at 0")
    rows, flags, warnings = [], [], []
    for i, k in enumerate(kappas):
        q = BermanQuery(fbm(k), T=T, delta=delta, n_paths=n_paths, seed=seed + 7919 * i,
                        extrapolate=extrapolate, threads=threads)
        ests = estimate_berman_curve(q, xs)
        for j, e in enumerate(ests):
            rows.append({"kappa": float(k), "x": float(e.x), "value": e.value, "std_error": e.std_error,
                         "T": e.T, "delta": e.delta, "n_paths": e.n_paths, "extrapolated": e.extrapolated})
            if j and e.value > ests[j - 1].value + n_se * math.hypot(e.std_error, ests[j - 1].std_error):
                flags.append({"kappa": float(k), "x": float(e.x)})
        rel = max(e.std_error / e.value for e in ests if e.value > 0)
        if rel > 0.05:
            warnings.append(f"kappa={k:g}: relative standard error up to {rel:.2f}; budget may not resolve monotonicity")
    md = {"kappas": [float(k) for k in kappas], "x": xs.tolist(), "T": T, "delta": delta, "n_paths": n_paths,
          "seed": seed, "extrapolated": extrapolate, "monotonicity_violations": flags, "warnings": warnings}
    table = BermanTable(rows, md)
    if path is not None:
        table.save(path)
    return table
