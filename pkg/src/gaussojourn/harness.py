"""
Monte Carlo estimation of the sojourn ruin probability

    p(u) = P( int_0^T 1(X(t) - d t**gamma > u) dt > L_u ),   L_u = L u**lu_exponent,

with crude and mean-shift importance-sampling estimators, experiment configs
and on-disk reports.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .asymptotics import Case, RegimeInput, approximate_probability, classify, constant
from .berman import BermanTable, DomainError
from .kernels import KernelSpec, ParameterError, covariance, meta
from .sampler import GridSpec, PathSource, RiskSource, map_blocks
from .sojourn import TrendSpec, sojourn_values

Z95 = float(norm.ppf(0.975))
MIN_ESS = 100.0
MIN_PATHS = 1000


class Estimator(str, enum.Enum):
    CRUDE = "CRUDE"
    MEANSHIFT_IS = "MEANSHIFT_IS"


class Mode(str, enum.Enum):
    RAW = "RAW"
    RISK_X = "RISK_X"


class ConfigError(ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kernel: KernelSpec
    u: list
    construction: Mode = Mode.RISK_X
    trend: TrendSpec = field(default_factory=TrendSpec)
    T: float = 1.0
    L: float = 0.0
    lu_exponent: float | str | None = None
    n_points: int = 1025
    refine: bool = False
    n_paths: int = 10_000
    estimator: Estimator = Estimator.CRUDE
    seed: int = 0
    threads: int = 1
    name: str = "experiment"
    asymptotics: dict | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.construction = Mode(self.construction)
        self.estimator = Estimator(self.estimator)
        self.u = [float(v) for v in self.u]
        if not self.u:
            raise ConfigError("u ladder is empty", "u")
        if any(b <= a for a, b in zip(self.u, self.u[1:])):
            raise ConfigError("u ladder must be strictly increasing", "u")
        if self.L < 0:
            raise ConfigError("L must be >= 0", "L")
        if not self.T > 0:
            raise ConfigError("T must be > 0", "T")
        if self.construction is Mode.RISK_X and self.T != 1.0:
            raise ConfigError("RISK_X experiments live on [0, 1]; set T = 1", "T")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1", "n_paths")

    @property
    def grid(self):
        return GridSpec(0.0, self.T, self.n_points)

    def regime_input(self):
        opts = self.asymptotics or {}
        return RegimeInput.from_kernel(self.kernel, d=self.trend.d, gamma=self.trend.gamma, L=self.L,
                                       epsilon=opts.get("epsilon"), a=opts.get("a"), b=opts.get("b"))

    def resolve_lu_exponent(self):
        """``L_u`` exponent: a number, ``None``/``"fixed"`` for ``L_u = L``, or ``"theorem"``."""
        e = self.lu_exponent
        if e is None or e == "fixed":
            return 0.0, None
        if e == "theorem":
            regimes = classify(self.regime_input())
            reg = _pick_regime(regimes, (self.asymptotics or {}).get("case"))
            return reg.lu_exponent, reg
        return float(e), None

    def to_dict(self):
        return {
            "name": self.name, "kernel": self.kernel.to_dict(), "construction": self.construction.value,
            "trend": {"d": self.trend.d, "gamma": self.trend.gamma}, "T": self.T, "u": self.u, "L": self.L,
            "lu_exponent": self.lu_exponent, "n_points": self.n_points, "refine": self.refine,
            "n_paths": self.n_paths, "estimator": self.estimator.value, "seed": self.seed,
            "asymptotics": self.asymptotics,
        }


_FIELDS = {
    "name": str, "kernel": dict, "construction": str, "trend": dict, "T": (int, float), "u": list,
    "L": (int, float), "lu_exponent": (int, float, str, type(None)), "n_points": int, "refine": bool,
    "n_paths": int, "estimator": str, "seed": int, "threads": int, "asymptotics": (dict, type(None)),
    "output": dict,
}


def _line_of(text, key):
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def parse_config(text: str, out_dir=None) -> ExperimentConfig:
    """Parse a JSON experiment config, reporting the offending field and line."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", line=1)
    for key, val in raw.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown field; expected one of {sorted(_FIELDS)}", key, _line_of(text, key))
        typ = _FIELDS[key]
        if isinstance(val, bool) and typ in (int, (int, float)) or not isinstance(val, typ):
            raise ConfigError(f"wrong type {type(val).__name__}", key, _line_of(text, key))
    for key in ("kernel", "u"):
        if key not in raw:
            raise ConfigError("required field missing", key)
    kw = {k: v for k, v in raw.items() if k not in ("kernel", "trend", "output")}
    try:
        kernel = KernelSpec.from_dict(raw["kernel"])
    except (ParameterError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e).strip("'\""), "kernel", _line_of(text, "kernel")) from None
    trend = raw.get("trend", {})
    try:
        trend = TrendSpec(float(trend.get("d", 0.0)), float(trend.get("gamma", 1.0)))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e), "trend", _line_of(text, "trend")) from None
    out = out_dir or raw.get("output", {}).get("dir")
    try:
        return ExperimentConfig(kernel=kernel, trend=trend, out_dir=out, **kw)
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[-1], e.field, _line_of(text, e.field) if e.field else None) from None
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, out_dir=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), out_dir)


def _pick_regime(regimes, case=None):
    if regimes[0].case is Case.UNCOVERED:
        raise DomainError(f"uncovered parameter set: {regimes[0].note}")
    if case is None:
        return regimes[0]
    for r in regimes:
        if r.case.value == str(case):
            return r
    raise DomainError(f"requested case {case} not among {[r.case.value for r in regimes]}")


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

@dataclass
class RuinRow:
    u: float
    L_u: float
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_hits: int
    n_paths: int
    ess: float | None = None
    flags: list = field(default_factory=list)
    coarse: float | None = None
    fine: float | None = None
    rate: float | None = None
    asymptotic: float | None = None
    ratio: float | None = None
    ratio_ci_low: float | None = None
    ratio_ci_high: float | None = None


@dataclass
class RunReport:
    config: dict
    seed: int
    estimator: str
    rows: list
    regime: dict | None = None
    runtime: dict = field(default_factory=dict)

    def to_dict(self, with_runtime=False):
        out = {"config": self.config, "seed": self.seed, "estimator": self.estimator,
               "regime": self.regime, "rows": [asdict(r) for r in self.rows]}
        if with_runtime:
            out["runtime"] = self.runtime
        return out


def wilson(hits, n, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if hits == 0 else max(0.0, mid - half)
    hi = 1.0 if hits == n else min(1.0, mid + half)
    return lo, hi


class _Source:
    """Paths of the process that enters the sojourn functional, plus its covariance."""

    def __init__(self, cfg: ExperimentConfig, grid: GridSpec):
        self.grid = grid
        if cfg.construction is Mode.RISK_X:
            self._risk = RiskSource(cfg.kernel, grid)
            self.block = self._risk.block
            self.variances = self._risk.variances
            self.column = self._risk.covariance_column
        else:
            src = PathSource(cfg.kernel, grid)
            t = grid.points
            self.block = src.block
            self.variances = lambda: np.asarray(covariance(cfg.kernel, t, t), dtype=float)
            self.column = lambda j: np.asarray(covariance(cfg.kernel, t, t[j]), dtype=float)


def _exceed(values, grid, trend, u, L_u):
    """Indicator of ``sojourn > L_u``.

    For ``L_u = 0`` this is "some grid point above the boundary" (the last
    point included), the grid version of a nonempty excursion set.
    """
    if L_u == 0:
        return np.any(values - trend(grid.points) > u, axis=1)
    return sojourn_values(values, grid, trend, u) > L_u


def shift_point(sigma2, t, trend, u, mask=None):
    """Index maximising ``sd(t) / (u + d t**gamma)`` (the standardised-field maximiser)."""
    level = u + trend(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(level > 0, np.sqrt(sigma2) / level, np.sqrt(sigma2))
    if mask is not None:
        score = np.where(mask, score, -np.inf)
    return int(np.argmax(score))


def estimate_ruin(cfg: ExperimentConfig, lu_exponent=None):
    """Per-``u`` estimates of the ruin probability.

    With ``cfg.refine`` the paths are drawn on the refined grid and read on
    both it and the original (every second point), so the two resolutions are
    paired; the reported estimate is the per-path Richardson combination at
    rate ``delta**(kappa/2)``.
    """
    if lu_exponent is None:
        lu_exponent, _ = cfg.resolve_lu_exponent()
    coarse = cfg.grid
    grid = coarse.refine() if cfg.refine else coarse
    step = 2 if cfg.refine else 1
    src = _Source(cfg, grid)
    t = grid.points
    us = np.array(cfg.u)
    lus = cfg.L * us**lu_exponent
    importance = cfg.estimator is Estimator.MEANSHIFT_IS
    if importance:
        sig2 = src.variances()
        on_coarse = np.zeros(t.size, dtype=bool)
        on_coarse[::step] = True
        js = [shift_point(sig2, t, cfg.trend, u, on_coarse) for u in us]
        cols = {j: src.column(j) for j in set(js)}
        mus = [(u + float(cfg.trend(t[j]))) / sig2[j] for u, j in zip(us, js)]
    r = 2.0 ** (meta(cfg.kernel).kappa / 2.0)

    def block(b, lo, hi):
        base = src.block(cfg.seed, b, hi - lo)
        out = np.empty((hi - lo, us.size, 3))
        for i, (u, L_u) in enumerate(zip(us, lus)):
            if importance:
                j, mu = js[i], mus[i]
                x = base + mu * cols[j]
                w = np.exp(-mu * x[:, j] + 0.5 * mu * mu * sig2[j])
            else:
                x, w = base, 1.0
            hit_f = _exceed(x, grid, cfg.trend, u, L_u)
            hit_c = _exceed(x[:, ::step], coarse, cfg.trend, u, L_u) if cfg.refine else hit_f
            out[:, i, 0] = w * hit_c
            out[:, i, 1] = w * hit_f
            out[:, i, 2] = w
        return out

    vals = np.concatenate(map_blocks(block, cfg.n_paths, cfg.threads))
    n = vals.shape[0]
    rows = []
    for i, (u, L_u) in enumerate(zip(us, lus)):
        vc, vf, w = vals[:, i, 0], vals[:, i, 1], vals[:, i, 2]
        per_path = (r * vf - vc) / (r - 1.0) if cfg.refine else vf
        n_hits = int(np.count_nonzero(vf))
        est = float(per_path.mean())
        se = float(per_path.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        flags = []
        ess = None
        if importance:
            hw = w[vf > 0]
            ess = float(hw.sum() ** 2 / (hw**2).sum()) if hw.size else 0.0
            if ess < MIN_ESS:
                flags.append("low_ess")
            lo_, hi_ = max(0.0, est - Z95 * se), min(1.0, est + Z95 * se)
        elif cfg.refine:
            lo_, hi_ = max(0.0, est - Z95 * se), min(1.0, est + Z95 * se)
        else:
            lo_, hi_ = wilson(n_hits, n)
        if n_hits == 0:
            flags.append("insufficient_hits")
            lo_, hi_ = 0.0, (wilson(0, n)[1] if not importance else hi_)
        if n < MIN_PATHS:
            flags.append("few_paths")
        rows.append(RuinRow(
            float(u), float(L_u), est, se, lo_, hi_, n_hits, n, ess, flags,
            float(vc.mean()) if cfg.refine else None, float(vf.mean()) if cfg.refine else None,
            r if cfg.refine else None,
        ))
    return rows


def _report(cfg, rows, lu_exponent, regime=None, t0=None):
    cfg_d = cfg.to_dict()
    cfg_d["lu_exponent_used"] = lu_exponent
    rep = RunReport(cfg_d, cfg.seed, cfg.estimator.value, rows, regime)
    if t0 is not None:
        rep.runtime = {"seconds": time.perf_counter() - t0, "threads": cfg.threads}
    return rep


def estimate_ruin_crude(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    cfg = _with(cfg, estimator=Estimator.CRUDE)
    e, _ = cfg.resolve_lu_exponent()
    return _report(cfg, estimate_ruin(cfg, e), e, t0=t0)


def estimate_ruin_is(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    cfg = _with(cfg, estimator=Estimator.MEANSHIFT_IS)
    e, _ = cfg.resolve_lu_exponent()
    return _report(cfg, estimate_ruin(cfg, e), e, t0=t0)


def _with(cfg, **changes):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d.update(changes)
    return ExperimentConfig(**d)


def run_ratio_experiment(cfg: ExperimentConfig, regime=None, berman=None, **budget) -> RunReport:
    """Estimates next to ``c u**p Psi(u)`` with the ratio and its CI.

    ``regime`` defaults to the first applicable case for the config's kernel;
    its constant is computed when missing.  ``L_u`` follows the regime unless
    the config fixes a numeric exponent.
    """
    t0 = time.perf_counter()
    inp = cfg.regime_input()
    if regime is None:
        regime = _pick_regime(classify(inp), (cfg.asymptotics or {}).get("case"))
    if regime.c is None:
        regime = constant(inp, regime, berman, **budget)
    e = regime.lu_exponent if cfg.lu_exponent in (None, "theorem") else float(cfg.lu_exponent)
    rows = estimate_ruin(cfg, e)
    for row in rows:
        approx = approximate_probability(inp, regime, row.u)
        row.asymptotic = approx.value
        row.ratio = row.estimate / approx.value
        row.ratio_ci_low = row.ci_low / approx.value
        row.ratio_ci_high = row.ci_high / approx.value
    return _report(cfg, rows, e, regime.to_dict(), t0)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

ROW_COLUMNS = ("u", "L_u", "estimate", "std_error", "ci_low", "ci_high", "n_hits", "n_paths", "ess",
               "coarse", "fine", "asymptotic", "ratio", "ratio_ci_low", "ratio_ci_high", "flags")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(v)
    return str(v)


def write_rows_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(ROW_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_cell(d[c]) for c in ROW_COLUMNS])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_tsv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_config(path, out_dir=None, threads=None, seed=None):
    """Run one experiment file and write its artifacts; returns the output directory.

    Files: ``report.json`` and ``estimates.csv`` (deterministic given the seed),
    ``ratio_vs_u.tsv`` when an asymptotic comparison is configured,
    ``berman_<kappa>.tsv`` curves for any Berman table used, and
    ``runtime.json`` (wall-clock only, excluded from reproducibility checks).
    """
    cfg = load_config(path, out_dir)
    changes = {}
    if threads is not None:
        changes["threads"] = threads
    if seed is not None:
        changes["seed"] = seed
    if changes:
        cfg = _with(cfg, **changes)
    out = cfg.out_dir or os.environ.get("GAUSSOJOURN_OUT_DIR") or os.path.join("out", cfg.name)
    os.makedirs(out, exist_ok=True)
    opts = cfg.asymptotics or {}
    table = None
    if opts.get("berman_table"):
        tpath = opts["berman_table"]
        if not os.path.isabs(tpath):
            tpath = os.path.join(os.path.dirname(os.path.abspath(path)), tpath)
        table = BermanTable.load(tpath)
    if opts.get("enabled", bool(opts)):
        rep = run_ratio_experiment(cfg, berman=table, **opts.get("berman_budget", {}))
        write_tsv(os.path.join(out, "ratio_vs_u.tsv"), ("u", "ratio", "ratio_ci_low", "ratio_ci_high"),
                  [(repr(r.u), repr(r.ratio), repr(r.ratio_ci_low), repr(r.ratio_ci_high)) for r in rep.rows])
    else:
        rep = (estimate_ruin_is if cfg.estimator is Estimator.MEANSHIFT_IS else estimate_ruin_crude)(cfg)
    write_tsv(os.path.join(out, "estimate_vs_u.tsv"), ("u", "estimate", "ci_low", "ci_high"),
              [(repr(r.u), repr(r.estimate), repr(r.ci_low), repr(r.ci_high)) for r in rep.rows])
    if table is not None:
        for k in table.kappas:
            cur = table.curve(k)
            write_tsv(os.path.join(out, f"berman_{k:g}.tsv"), ("x", "value", "std_error"),
                      [(repr(float(x)), repr(float(v)), repr(float(s))) for x, v, s in zip(cur.x, cur.value, cur.std_error)])
    write_json(os.path.join(out, "report.json"), rep.to_dict())
    write_rows_csv(os.path.join(out, "estimates.csv"), rep.rows)
    write_json(os.path.join(out, "runtime.json"), rep.runtime)
    return out
