"""
Covariance families of self-similar Gaussian processes.

Every family is normalised so that ``R(1, 1) = 1`` and ``R(t, t) = t**alpha``
where ``alpha`` is the self-similarity exponent reported by :func:`meta`.
Kernels are evaluated with numpy broadcasting, so ``covariance(spec, t, s)``
accepts scalars or arrays of any compatible shape.

>>> spec = KernelSpec(Family.EX31, {"alpha": 1.5})
>>> float(covariance(spec, 1.0, 1.0))
1.0
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate, special


class ParameterError(ValueError):
    """Kernel parameters outside the family's admissible domain."""


class QuadratureError(ArithmeticError):
    def __init__(self, message, achieved_tol):
        super().__init__(f"{message} (achieved tolerance {achieved_tol:.3g})")
        self.achieved_tol = achieved_tol


class Family(str, enum.Enum):
    FBM = "FBM"
    EX31 = "EX31"
    SUBFBM = "SUBFBM"
    NEGSUBFBM = "NEGSUBFBM"
    WEIGHTEDFBM = "WEIGHTEDFBM"
    INTFBM = "INTFBM"
    TIMEAVGFBM = "TIMEAVGFBM"
    DUALFBM = "DUALFBM"


# name -> (low, high, low_inclusive, high_inclusive)
_DOMAINS = {
    Family.FBM: {"kappa": (0.0, 2.0, False, True)},
    Family.EX31: {"alpha": (1.0, 2.0, False, False)},
    Family.SUBFBM: {"alpha": (0.0, 2.0, False, False)},
    Family.NEGSUBFBM: {"alpha": (2.0, 4.0, False, True)},
    Family.WEIGHTEDFBM: {"kappa": (0.0, 2.0, False, True), "a": (1.0, math.inf, False, False)},
    Family.INTFBM: {"alpha": (0.0, 2.0, False, False)},
    Family.TIMEAVGFBM: {"alpha": (0.0, 2.0, False, True)},
    Family.DUALFBM: {"alpha": (0.0, 2.0, False, False)},
}


def _fmt_interval(lo, hi, lo_in, hi_in):
    return f"{'[' if lo_in else '('}{lo:g}, {hi:g}{']' if hi_in else ')'}"


@dataclass(frozen=True)
class KernelSpec:
    """A covariance family together with its parameters.

    ``params`` uses ``alpha`` for every family except FBM (``kappa``) and
    WEIGHTEDFBM (``kappa`` and ``a``).
    """

    family: Family
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            valid = ", ".join(f.value for f in Family)
            raise ParameterError(f"unknown family {self.family!r}; valid families: {valid}") from None
        object.__setattr__(self, "family", fam)
        domain = _DOMAINS[fam]
        params = {k: float(v) for k, v in dict(self.params).items()}
        missing = set(domain) - set(params)
        extra = set(params) - set(domain)
        if missing or extra:
            raise ParameterError(
                f"{fam.value} expects parameters {sorted(domain)}, got {sorted(params)}"
            )
        for name, (lo, hi, lo_in, hi_in) in domain.items():
            v = params[name]
            ok_lo = v >= lo if lo_in else v > lo
            ok_hi = v <= hi if hi_in else v < hi
            if not (math.isfinite(v) and ok_lo and ok_hi):
                raise ParameterError(
                    f"{fam.value}: {name}={v:g} outside {_fmt_interval(lo, hi, lo_in, hi_in)}"
                )
        object.__setattr__(self, "params", params)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self):
        return {"family": self.family.value, "params": dict(self.params)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, Mapping) or "family" not in obj:
            raise ParameterError('kernel spec must be an object {"family": ..., "params": {...}}')
        return cls(obj["family"], obj.get("params", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def fbm(kappa):
    return KernelSpec(Family.FBM, {"kappa": kappa})


# ---------------------------------------------------------------------------
# covariance functions
# ---------------------------------------------------------------------------

def _pow(x, p):
    # 0**p with p > 0 is 0; avoid warnings for p <= 0 at x == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.power(np.maximum(x, 0.0), p), 0.0)


def _cov_fbm(t, s, kappa):
    return 0.5 * (_pow(t, kappa) + _pow(s, kappa) - _pow(np.abs(t - s), kappa))


def _cov_ex31(t, s, alpha):
    return (_pow(t + s, alpha) - _pow(np.abs(t - s), alpha)) / 2.0**alpha


def _cov_subfbm(t, s, alpha):
    norm = 2.0 - 2.0 ** (alpha - 1.0)
    return (_pow(t, alpha) + _pow(s, alpha) - 0.5 * (_pow(t + s, alpha) + _pow(np.abs(t - s), alpha))) / norm


def _cov_negsubfbm(t, s, alpha):
    norm = 2.0 ** (alpha - 1.0) - 2.0
    return (0.5 * (_pow(t + s, alpha) + _pow(np.abs(t - s), alpha)) - _pow(t, alpha) - _pow(s, alpha)) / norm


def _cov_weighted(t, s, kappa, a):
    # R = (m^alpha + M^alpha * I_{m/M}(a, kappa)) / 2 with m = min, M = max;
    # the prefactor Gamma(a+k)/(2 Gamma(a) Gamma(k)) times B(a, k) is 1/2.
    alpha = a + kappa - 1.0
    lo = np.minimum(t, s)
    hi = np.maximum(t, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 0.0)
    return 0.5 * (_pow(lo, alpha) + _pow(hi, alpha) * special.betainc(a, kappa, ratio))


def _cov_intfbm(t, s, alpha):
    return (
        (alpha + 2.0) * (_pow(s, alpha + 1.0) * t + s * _pow(t, alpha + 1.0))
        + _pow(np.abs(t - s), alpha + 2.0)
        - _pow(t, alpha + 2.0)
        - _pow(s, alpha + 2.0)
    ) / (2.0 * (alpha + 1.0))


def _cov_timeavg(t, s, alpha):
    ts = t * s
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _cov_intfbm(t, s, alpha) / np.where(ts > 0, ts, 1.0)
    return np.where(ts > 0, out, 0.0)


def _cov_dual(t, s, alpha):
    tot = t + s
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (_pow(t, alpha) * s + _pow(s, alpha) * t) / np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, out, 0.0)


def covariance(spec: KernelSpec, t, s):
    """Covariance ``R_Y(t, s)`` of the family, broadcasting over ``t`` and ``s``.

    Returns a numpy scalar for scalar input.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ParameterError("covariance is defined for t, s >= 0")
    p = spec.params
    fam = spec.family
    if fam is Family.FBM:
        out = _cov_fbm(t, s, p["kappa"])
    elif fam is Family.EX31:
        out = _cov_ex31(t, s, p["alpha"])
    elif fam is Family.SUBFBM:
        out = _cov_subfbm(t, s, p["alpha"])
    elif fam is Family.NEGSUBFBM:
        out = _cov_negsubfbm(t, s, p["alpha"])
    elif fam is Family.WEIGHTEDFBM:
        out = _cov_weighted(t, s, p["kappa"], p["a"])
    elif fam is Family.INTFBM:
        out = _cov_intfbm(t, s, p["alpha"])
    elif fam is Family.TIMEAVGFBM:
        out = _cov_timeavg(t, s, p["alpha"])
    else:
        out = _cov_dual(t, s, p["alpha"])
    return out[()] if out.ndim == 0 else out


def weighted_fbm_quad(kappa, a, t, s, rtol=1e-10):
    """Weighted-fBm covariance by adaptive quadrature of its defining integral.

    Each of the two terms ``int_0^m u^(a-1) (M-u)^(kappa-1) du`` is mapped by
    ``M - u = v**(1/kappa)``, which turns the endpoint singularity at ``u = M``
    (present when ``kappa < 1``) into a bounded integrand.
    """
    KernelSpec(Family.WEIGHTEDFBM, {"kappa": kappa, "a": a})
    t, s = float(t), float(s)
    m = min(t, s)
    if m <= 0.0:
        return 0.0
    pref = math.exp(math.lgamma(a + kappa) - math.lgamma(a) - math.lgamma(kappa)) / 2.0

    def term(big):
        lo, hi = (big - m) ** kappa, big**kappa

        def f(v):
            return max(big - v ** (1.0 / kappa), 0.0) ** (a - 1.0) / kappa

        val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=rtol, limit=200)
        if not math.isfinite(val) or err > max(100 * rtol * abs(val), 1e-300):
            raise QuadratureError("weighted fBm quadrature did not converge", err / max(abs(val), 1e-300))
        return val

    return pref * (term(t) + term(s))


def variance(spec: KernelSpec, t):
    return covariance(spec, t, t)


_CLAMP = 1e-12


def variogram(spec: KernelSpec, t, s):
    """``Var(Y(t) - Y(s))``, with roundoff negatives down to -1e-12 clamped to zero."""
    v = variance(spec, t) + variance(spec, s) - 2.0 * covariance(spec, t, s)
    v = np.asarray(v)
    if np.any(v < -_CLAMP):
        raise ArithmeticError(f"negative variogram {v.min():.3g}: kernel is not positive semidefinite here")
    v = np.maximum(v, 0.0)
    return v[()] if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# structural metadata
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelfSimilarMeta:
    """Self-similarity and local structure of a family.

    ``alpha``: ``R(ct, cs) = c**alpha R(t, s)``.  ``kappa``, ``c_Y``:
    ``V(1-h, 1) ~ c_Y h**kappa``.  ``beta``, ``R``: ``1 - V(x, 1) ~ R x**beta``.
    ``R_source`` is ``"closed"`` for tabulated values and ``"numeric"`` when
    ``R`` was fitted (INTFBM); ``R`` is ``None`` when no value is known.
    """

    alpha: float
    kappa: float
    c_Y: float
    beta: float
    R: float | None
    R_source: str = "closed"

    @property
    def risk_construction_ok(self):
        """Whether the risk-process construction ``Y(1) - Y(t)`` meets its conditions."""
        return self.R is not None and self.beta >= 1.0 and self.beta > self.alpha / 2.0


@functools.lru_cache(maxsize=256)
def meta(spec: KernelSpec) -> SelfSimilarMeta:
    p = spec.params
    fam = spec.family
    if fam is Family.FBM:
        k = p["kappa"]
        return SelfSimilarMeta(k, k, 1.0, 1.0, k)
    if fam is Family.EX31:
        al = p["alpha"]
        return SelfSimilarMeta(al, al, 2.0 ** (1.0 - al), 1.0, al * 2.0 ** (2.0 - al))
    if fam is Family.SUBFBM:
        al = p["alpha"]
        norm = 2.0 - 2.0 ** (al - 1.0)
        return SelfSimilarMeta(al, al, 1.0 / norm, al, 2.0 ** (al - 1.0) / norm)
    if fam is Family.NEGSUBFBM:
        al = p["alpha"]
        norm = 2.0 ** (al - 1.0) - 2.0
        return SelfSimilarMeta(al, 2.0, al * (al - 1.0) * 2.0 ** (al - 3.0) / norm, 2.0, al * (al - 1.0) / norm)
    if fam is Family.WEIGHTEDFBM:
        k, a = p["kappa"], p["a"]
        lg = math.lgamma
        c_y = math.exp(lg(a + k) - lg(a) - lg(k + 1.0))
        r = math.exp(lg(a + k) - lg(a + 1.0) - lg(k))
        return SelfSimilarMeta(a + k - 1.0, k, c_y, a, r)
    if fam is Family.INTFBM:
        al = p["alpha"]
        beta = al + 1.0 if al <= 1.0 else 2.0
        r = estimate_tail_constant(spec, beta)
        return SelfSimilarMeta(al + 2.0, 2.0, al + 2.0, beta, r, "numeric")
    if fam is Family.TIMEAVGFBM:
        al = p["alpha"]
        if al > 1.0:
            r = al / 2.0 + 1.0
        elif al == 1.0:
            r = 2.0
        else:
            return SelfSimilarMeta(al, 2.0, 1.0, al, None, "none")
        return SelfSimilarMeta(al, 2.0, 1.0, 1.0, r)
    al = p["alpha"]
    if al > 1.0:
        r, beta = 2.0, 1.0
    elif al == 1.0:
        r, beta = 3.0, 1.0
    else:
        return SelfSimilarMeta(al, 2.0, al / 2.0, al, None, "none")
    return SelfSimilarMeta(al, 2.0, al / 2.0, beta, r)


def estimate_tail_constant(spec: KernelSpec, beta, x_max=1e-2, x_min=1e-6, n=9):
    """Fit ``R`` in ``1 - V(x, 1) ~ R x**beta`` from a log-spaced ladder of ``x``.

    The ratio ``(1 - V(x, 1)) / x**beta`` is regressed on ``log x`` against the
    slowest competing power and extrapolated to ``x = 0``; when the ladder is
    already flat the smallest-``x`` ratio is returned.
    """
    xs = np.geomspace(x_max, x_min, n)
    ratios = (1.0 - variogram(spec, xs, 1.0)) / xs**beta
    # residual ~ x^q; q unknown, so estimate it from consecutive differences
    d = np.diff(ratios)
    if np.all(np.abs(d) <= 1e-9 * np.abs(ratios[-1])):
        return float(ratios[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.log(np.abs(d[:-1] / d[1:])) / np.log(xs[0] / xs[1])
    q_est = float(np.median(q[np.isfinite(q)])) if np.any(np.isfinite(q)) else 1.0
    if not q_est > 0:
        return float(ratios[-1])
    # Richardson on the last two rungs with the estimated rate
    r1, r2 = ratios[-2], ratios[-1]
    ratio = (xs[-2] / xs[-1]) ** q_est
    return float((ratio * r2 - r1) / (ratio - 1.0))


# ---------------------------------------------------------------------------
# structural validators
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    check: str
    spec: KernelSpec
    tol: float
    passed: bool
    worst: float
    worst_at: tuple
    skipped: bool = False
    details: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"check": self.check, "spec": self.spec.to_dict(), "tol": self.tol, "passed": self.passed,
                "worst": self.worst, "worst_at": list(self.worst_at), "skipped": self.skipped}

    def summary(self):
        status = "skip" if self.skipped else ("pass" if self.passed else "FAIL")
        return f"{self.check} {self.spec.family.value} {status} worst={self.worst:.3g} at {self.worst_at}"


_S1_POINTS = (0.1, 0.37, 1.0, 2.5, 7.0)
_S1_SCALES = (0.05, 0.5, 3.0, 20.0)


def validate_s1(spec: KernelSpec, tol=1e-10) -> ValidationReport:
    """Check ``R(ct, cs) = c**alpha R(t, s)`` on a fixed lattice."""
    al = meta(spec).alpha
    worst, where, details = 0.0, (), []
    for t in _S1_POINTS:
        for s in _S1_POINTS:
            base = float(covariance(spec, t, s))
            for c in _S1_SCALES:
                scaled = float(covariance(spec, c * t, c * s))
                err = abs(scaled - c**al * base) / (c**al * abs(base))
                details.append((t, s, c, err))
                if err > worst:
                    worst, where = err, (t, s, c)
    return ValidationReport("S1", spec, tol, worst <= tol, worst, where, details=details)


_H_LADDER = (1e-2, 1e-3, 1e-4)


def validate_s2(spec: KernelSpec, tol=0.02, hs=_H_LADDER) -> ValidationReport:
    """Check ``V(1-h, 1) / h**kappa -> c_Y``; ``tol`` is relative to ``c_Y``.

    Only the finest rung is held to ``tol``; the others are reported.
    """
    m = meta(spec)
    details = []
    for h in hs:
        ratio = float(variogram(spec, 1.0 - h, 1.0)) / h**m.kappa
        details.append((h, ratio, abs(ratio - m.c_Y) / m.c_Y))
    h, ratio, err = details[-1]
    return ValidationReport("S2", spec, tol, err <= tol, err, (h,), details=details)


def validate_tail(spec: KernelSpec, tol=0.02, hs=_H_LADDER) -> ValidationReport:
    """Check ``(1 - V(x, 1)) / x**beta -> R``; skipped when ``R`` is not tabulated."""
    m = meta(spec)
    if m.R is None or m.R_source != "closed":
        return ValidationReport("TAIL", spec, tol, True, 0.0, (), skipped=True)
    details = []
    for x in hs:
        ratio = (1.0 - float(variogram(spec, x, 1.0))) / x**m.beta
        details.append((x, ratio, abs(ratio - m.R) / m.R))
    x, ratio, err = details[-1]
    return ValidationReport("TAIL", spec, tol, err <= tol, err, (x,), details=details)
