"""
Regime classification and constants for the sojourn-time asymptotics

    P( int_0^T 1(X(t) - d t**gamma > u) dt > L_u ) ~ c u**p Psi(u),   u -> inf.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import erfc

from .berman import BermanQuery, BermanTable, DomainError, DriftSpec, TableCurve, estimate_berman
from .kernels import Family, KernelSpec, meta

CLOSE = dict(rel_tol=1e-12, abs_tol=1e-12)


def psi(u):
    """Standard normal survival function."""
    u = np.asarray(u, dtype=float)
    out = 0.5 * erfc(u / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


class Case(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    UNCOVERED = "UNCOVERED"


@dataclass(frozen=True)
class RegimeInput:
    alpha: float
    kappa: float
    c_Y: float
    a: float
    b: float
    beta: float
    d: float
    gamma: float
    L: float = 0.0
    epsilon: float | None = None
    spec: KernelSpec | None = None

    def __post_init__(self):
        for name in ("alpha", "kappa", "c_Y", "a", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if self.kappa > 2:
            raise DomainError("kappa must lie in (0, 2]")
        if self.b < 0 or self.d < 0 or self.L < 0:
            raise DomainError("b, d and L must be >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")

    @property
    def beta_hat(self):
        return self.beta * self.kappa / self.alpha

    @property
    def gamma_hat(self):
        return self.gamma * self.kappa / self.alpha

    @classmethod
    def from_kernel(cls, spec: KernelSpec, d=0.0, gamma=None, L=0.0, epsilon=None, a=None, b=None):
        """Inputs for ``X(t) = Y(1) - Y(t)``; ``a = 1/2``, ``b = R/2`` unless given, ``gamma`` defaults to ``beta/2``."""
        m = meta(spec)
        if m.beta is None:
            raise DomainError(f"{spec.family.value} has no variance-decay exponent beta")
        if b is None:
            if m.R is None:
                raise DomainError(f"{spec.family.value} with these parameters has no tail constant R; pass b")
            b = m.R / 2.0
        return cls(m.alpha, m.kappa, m.c_Y, 0.5 if a is None else a, b, m.beta, d,
                   m.beta / 2.0 if gamma is None else gamma, L, epsilon, spec)

    def to_dict(self):
        out = {k: v for k, v in asdict(self).items() if k != "spec"}
        out["spec"] = None if self.spec is None else self.spec.to_dict()
        out["beta_hat"], out["gamma_hat"] = self.beta_hat, self.gamma_hat
        return out


@dataclass
class Regime:
    case: Case
    p: float = math.nan
    lu_exponent: float = math.nan
    l_zero_allowed: bool = False
    epsilon: float | None = None
    epsilon_max: float | None = None
    c: float | None = None
    c_error: float | None = None
    note: str = ""

    def lu(self, L, u):
        return L * u**self.lu_exponent

    def to_dict(self):
        out = asdict(self)
        out["case"] = self.case.value
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)


def epsilon_max(inp: RegimeInput):
    al, k = inp.alpha, inp.kappa
    return (al - k) / al * (2.0 / k - max(2.0 / inp.beta_hat, 1.0 / inp.gamma_hat))


def classify(inp: RegimeInput):
    """Every case of the theorem that applies to ``inp``.

    Cases II and III overlap when ``alpha > kappa``; both are returned.  When
    the requested ``L`` (or ``epsilon``) is admissible in no case, a single
    ``UNCOVERED`` regime explains why.
    """
    al, k, be, ga = inp.alpha, inp.kappa, inp.beta, inp.gamma
    below = al < min(be, 2.0 * ga)
    out, reasons = [], []
    if below and al <= k:
        out.append(Regime(
            Case.I,
            p=2.0 / k - max(2.0 / inp.beta_hat, 1.0 / inp.gamma_hat),
            lu_exponent=-2.0 / al + (k - al) / k * (2.0 / al - max(1.0 / ga, 2.0 / be)),
            l_zero_allowed=True,
        ))
    if below and al > k:
        emax = epsilon_max(inp)
        eps = emax if inp.epsilon is None else inp.epsilon
        if not 0.0 < eps <= emax * (1 + 1e-12):
            reasons.append(f"case II needs epsilon in (0, {emax:.12g}], got {eps:g}")
        else:
            at_max = math.isclose(eps, emax, **CLOSE)
            if inp.L == 0 and not at_max:
                reasons.append("case II with interior epsilon needs L > 0")
            else:
                out.append(Regime(Case.II, p=eps * al / (al - k), lu_exponent=-2.0 / al - eps,
                                  l_zero_allowed=at_max, epsilon=eps, epsilon_max=emax))
    if not below or al > k:
        zero_ok = not below
        if inp.L == 0 and not zero_ok:
            reasons.append("case III with alpha < min(beta, 2 gamma) needs L > 0")
        else:
            out.append(Regime(Case.III, p=0.0, lu_exponent=min(-2.0 / al, -2.0 / be, -1.0 / ga),
                              l_zero_allowed=zero_ok))
    if not out:
        return [Regime(Case.UNCOVERED, note="; ".join(reasons))]
    return out


# ---------------------------------------------------------------------------
# case I / II
# ---------------------------------------------------------------------------

def _exp_coefficients(inp: RegimeInput, regime: Regime):
    if regime.case is Case.I:
        return (inp.d if 2 * inp.gamma <= inp.beta else 0.0, inp.b if inp.beta <= 2 * inp.gamma else 0.0)
    al, k = inp.alpha, inp.kappa
    eps_g = (al - k) / al * (2.0 / k - 1.0 / inp.gamma_hat)
    eps_b = (al - k) / al * (2.0 / k - 2.0 / inp.beta_hat)
    e = regime.epsilon
    return (inp.d if math.isclose(e, eps_g, **CLOSE) else 0.0, inp.b if math.isclose(e, eps_b, **CLOSE) else 0.0)


def _integrate(f, w_max, rtol):
    pts = np.geomspace(max(w_max * 1e-9, 1e-12), w_max, 25)
    total, err = 0.0, 0.0
    lo = 0.0
    for hi in pts:
        v, e = integrate.quad(f, lo, hi, epsrel=rtol, epsabs=0.0, limit=500)
        total += v
        err += e
        lo = hi
    return total, err


def constant_case_i_ii(inp: RegimeInput, regime: Regime, berman, rtol=1e-8, max_extrapolated=0.01):
    """``c`` for cases I and II by quadrature against ``B_{B_kappa}``.

    ``berman`` is a :class:`BermanTable`, a :class:`TableCurve` or any callable
    ``x -> B_{B_kappa}(x)``.  After ``z = w**(kappa/alpha)`` the integrand is

        (kappa/alpha) exp(-D w**(gamma kappa/alpha) - B w**(beta kappa/alpha))
            * B_{B_kappa}(L (a c_Y)**(1/kappa) w**(1 - kappa/alpha))

    which is finite at ``w = 0``.  Returns ``(c, c_error)``; the error adds the
    quadrature estimate to half the spread between the table's +-1 SE envelopes.
    """
    if regime.case not in (Case.I, Case.II):
        raise DomainError(f"quadrature constant is for cases I and II, not {regime.case.value}")
    al, k = inp.alpha, inp.kappa
    D, Bc = _exp_coefficients(inp, regime)
    if regime.case is Case.II and D == 0 and Bc == 0 and inp.L == 0:
        raise DomainError("case II with interior epsilon requires L > 0")
    if isinstance(berman, BermanTable):
        berman = berman.curve(k)
    if isinstance(berman, TableCurve) and not math.isclose(berman.kappa, k, **CLOSE):
        raise DomainError(f"Berman curve is for kappa={berman.kappa:g}, need kappa={k:g}")
    scale = (inp.a * inp.c_Y) ** (1.0 / k)
    gk, bk, sk = inp.gamma * k / al, inp.beta * k / al, 1.0 - k / al

    def arg(w):
        return inp.L * scale * w**sk if inp.L > 0 else 0.0

    # the prefactor (a c_Y)**(1/kappa) is applied on return
    def make(curve: Callable):
        def f(w):
            return (k / al) * math.exp(-D * w**gk - Bc * w**bk) * float(curve(arg(w)))
        return f

    f0 = make(berman)
    w_max = _cutoff(f0)
    x_max = getattr(berman, "x_max", math.inf)
    c, err = _integrate(f0, w_max, rtol)
    if not c > 0:
        raise DomainError("integrand vanishes; check the Berman table and L")
    if math.isfinite(x_max) and inp.L > 0 and sk != 0:
        w_edge = (x_max / (inp.L * scale)) ** (1.0 / sk)
        lo, hi = (w_edge, w_max) if sk > 0 else (0.0, w_edge)
        if hi > lo:
            beyond = integrate.quad(f0, lo, hi, epsrel=1e-6, limit=500)[0]
            if beyond > max_extrapolated * c:
                x_hi = arg(w_max) if sk > 0 else arg(max(w_max * 1e-9, 1e-12))
                raise DomainError(
                    f"Berman table for kappa={k:g} ends at x={x_max:g}; {beyond / c:.1%} of c comes from "
                    f"x in [{x_max:g}, {x_hi:.3g}] - extend the table"
                )
    if isinstance(berman, TableCurve):
        up = _integrate(make(lambda x: berman(x, shift=1.0)), w_max, 1e-6)[0]
        dn = _integrate(make(lambda x: berman(x, shift=-1.0)), w_max, 1e-6)[0]
        err += 0.5 * abs(up - dn)
    return scale * c, scale * err


def _cutoff(f, rel=1e-12):
    """Right end of the integration window: integrand below ``rel`` times its peak."""
    ws = np.geomspace(1e-8, 1e8, 321)
    vals = np.array([f(w) for w in ws])
    peak = vals.max()
    if not peak > 0:
        return 1.0
    idx = np.nonzero(vals > rel * peak)[0][-1]
    if idx == ws.size - 1:
        raise DomainError("integrand does not decay; the constant is infinite for these inputs")
    return float(ws[idx + 1])


# ---------------------------------------------------------------------------
# case III
# ---------------------------------------------------------------------------

def case_iii_drift(inp: RegimeInput) -> DriftSpec:
    al, be, ga = inp.alpha, inp.beta, inp.gamma
    terms = []
    if be <= min(al, 2 * ga):
        terms.append((inp.a ** (-be / al) * inp.b, be))
    if 2 * ga <= min(al, be):
        terms.append((inp.a ** (-ga / al) * inp.d, ga))
    return DriftSpec(tuple(terms))


def case_iii_query(inp: RegimeInput, **budget) -> BermanQuery:
    """The half-line Berman query behind a case III constant."""
    zeta = inp.spec if inp.alpha <= min(inp.beta, 2 * inp.gamma) else None
    if zeta is None and inp.alpha <= min(inp.beta, 2 * inp.gamma):
        raise DomainError("this case needs the process Y; build RegimeInput.from_kernel")
    x = inp.L * inp.a ** (1.0 / inp.kappa)
    return BermanQuery(zeta, case_iii_drift(inp), x=x, T=None, normalized=False, **budget)


def constant_case_iii(inp: RegimeInput, regime: Regime | None = None, **budget):
    """``c`` for case III as ``(c, c_error)``.

    When ``alpha > min(beta, 2 gamma)`` the process drops out and
    ``c = exp(-h(L a**(1/kappa)))`` exactly; otherwise ``c`` is a half-line
    Berman constant of ``Y`` estimated by Monte Carlo with ``budget``.
    """
    if regime is not None and regime.case is not Case.III:
        raise DomainError(f"not a case III regime: {regime.case.value}")
    if inp.alpha > min(inp.beta, 2 * inp.gamma):
        h = case_iii_drift(inp)
        return math.exp(-float(h(inp.L * inp.a ** (1.0 / inp.kappa)))), 0.0
    est = estimate_berman(case_iii_query(inp, **budget))
    return est.value, est.std_error


def constant(inp: RegimeInput, regime: Regime, berman=None, **budget) -> Regime:
    """Return ``regime`` with ``c`` and ``c_error`` filled in."""
    if regime.case is Case.UNCOVERED:
        raise DomainError(f"uncovered parameter set: {regime.note}")
    if regime.case is Case.III:
        c, e = constant_case_iii(inp, regime, **budget)
    else:
        if berman is None:
            raise DomainError("cases I and II need a Berman table")
        c, e = constant_case_i_ii(inp, regime, berman)
    return replace(regime, c=c, c_error=e)


@dataclass
class Approximation:
    u: float
    value: float
    L_u: float
    psi: float


def approximate_probability(inp: RegimeInput, regime: Regime, u) -> Approximation:
    if not u > 0:
        raise DomainError("u must be > 0")
    if regime.c is None:
        raise DomainError("regime has no constant; call constant() first")
    ps = psi(u)
    return Approximation(float(u), regime.c * u**regime.p * ps, regime.lu(inp.L, u), ps)


# ---------------------------------------------------------------------------
# worked examples
# ---------------------------------------------------------------------------

@dataclass
class ExampleResult:
    """Outcome for one worked example.

    ``c`` is the example's displayed closed form (``None`` when the example
    states the constant as a Berman constant, in which case ``query`` holds it).
    ``theorem_c`` / ``theorem_query`` come from the general theorem applied to
    the kernel's meta data; ``consistent`` says whether the two agree.
    """

    example: str
    p: float
    lu_exponent: float
    c: float | None
    query: BermanQuery | None
    theorem_c: float | None
    theorem_query: BermanQuery | None
    consistent: bool | None
    regime_input: RegimeInput
    notes: list = field(default_factory=list)


def _spec_for(example, alpha=None, kappa=None, a=None):
    fam = {
        "3.1": Family.EX31, "3.2": Family.SUBFBM, "3.3": Family.NEGSUBFBM, "3.4": Family.WEIGHTEDFBM,
        "3.5": Family.INTFBM, "3.6": Family.TIMEAVGFBM, "3.7": Family.DUALFBM,
    }.get(example)
    if fam is None:
        raise DomainError(f"unknown example {example!r}; expected one of 3.1 .. 3.7")
    if fam is Family.WEIGHTEDFBM:
        if kappa is None or a is None:
            raise DomainError("example 3.4 needs kappa and a")
        return KernelSpec(fam, {"kappa": kappa, "a": a})
    if alpha is None:
        raise DomainError(f"example {example} needs alpha")
    return KernelSpec(fam, {"alpha": alpha})


def _same_query(q1, q2):
    return (q1.zeta == q2.zeta and math.isclose(q1.x, q2.x, **CLOSE)
            and len(q1.drift.terms) == len(q2.drift.terms)
            and all(math.isclose(c1, c2, **CLOSE) and math.isclose(e1, e2, **CLOSE)
                    for (c1, e1), (c2, e2) in zip(sorted(q1.drift.terms, key=lambda t: t[1]),
                                                  sorted(q2.drift.terms, key=lambda t: t[1]))))


def example_constant(example, L=1.0, d=0.0, alpha=None, kappa=None, a=None, epsilon=None, berman=None):
    """Evaluate one of the worked examples 3.1 - 3.7 (with ``gamma = beta/2``)."""
    example = str(example)
    try:
        spec = _spec_for(example, alpha, kappa, a)
    except ValueError as e:
        raise DomainError(str(e)) from e
    if example == "3.6" and spec["alpha"] < 1.0:
        raise DomainError("example 3.6 covers alpha in [1, 2]")
    if example == "3.7" and spec["alpha"] < 1.0:
        raise DomainError("example 3.7 covers alpha in [1, 2)")
    inp = RegimeInput.from_kernel(spec, d=d, L=L, epsilon=epsilon)
    regimes = classify(inp)
    if example == "3.4" and spec["kappa"] < 1.0:
        reg = next((r for r in regimes if r.case is Case.II), None)
        if reg is None:
            raise DomainError(f"example 3.4 with kappa < 1: {regimes[0].note}")
    else:
        reg = next((r for r in regimes if r.case is Case.III), None)
        if reg is None:
            raise DomainError(f"example {example}: no case III regime ({regimes[0].note})")
    notes = []
    theorem_c = theorem_q = None
    if reg.case is Case.II:
        if berman is not None:
            theorem_c = constant_case_i_ii(inp, reg, berman)[0]
        else:
            notes.append("case II constant needs a Berman table; pass berman=")
    elif inp.alpha > min(inp.beta, 2 * inp.gamma):
        theorem_c = constant_case_iii(inp, reg)[0]
    else:
        theorem_q = case_iii_query(inp)

    al = inp.alpha
    c = q = None
    if example == "3.1":
        c = math.exp(-al * 2.0 ** (1 - al) * L - d * L**0.5)
    elif example == "3.2":
        r = 2.0 ** (al - 1) / (2 - 2.0 ** (al - 1))
        q = BermanQuery(spec, DriftSpec(((r, al), (math.sqrt(2) * d, al / 2))), x=2.0 ** (-1 / al) * L,
                        T=None, normalized=False)
    elif example == "3.3":
        c = math.exp(-(2.0 ** (2 / al)) * al * (al + 1) / (2.0 ** (al + 1) - 8) * L**2 - 2.0 ** (1 / al - 0.5) * d * L)
    elif example == "3.4":
        k, aa = spec["kappa"], spec["a"]
        ratio = math.exp(math.lgamma(aa + k) - math.lgamma(aa + 1) - math.lgamma(k))
        if k > 1:
            c = math.exp(-(2.0 ** ((1 - k) / (aa + k - 1) - aa / k)) * ratio * L**aa
                         - 2.0 ** (aa / (2 * (aa + k - 1)) - aa / (2 * k)) * d * L ** (aa / 2))
        elif k == 1:
            q = BermanQuery(spec, DriftSpec(((1.0, aa), (math.sqrt(2) * d, aa / 2))), x=L / 2.0,
                            T=None, normalized=False)
        else:
            c = theorem_c
    elif example == "3.5":
        c = theorem_c
        notes.append("b is derived from the numerically fitted tail constant R")
    elif example == "3.6":
        if al > 1:
            c = math.exp(-(2.0 ** (1 / (2 * al))) * d * L**0.5 - 2.0 ** (1 / al) * (al + 2) / 4 * L)
        else:
            q = BermanQuery(spec, DriftSpec(((1.0, 1.0), (math.sqrt(2) * d, 0.5))), x=L / math.sqrt(2),
                            T=None, normalized=False)
    elif example == "3.7":
        if al > 1:
            c = math.exp(-(2.0 ** (1 / (2 * al) - 0.25)) * d * L**0.5 - 2.0 ** (1 / al - 0.5) * L)
        else:
            q = BermanQuery(spec, DriftSpec(((3.0, 1.0), (math.sqrt(2) * d, 0.5))), x=L / math.sqrt(2),
                            T=None, normalized=False)

    if c is not None and theorem_c is not None:
        consistent = math.isclose(c, theorem_c, rel_tol=1e-10)
    elif q is not None and theorem_q is not None:
        consistent = _same_query(q, theorem_q)
    else:
        consistent = None
    if consistent is False:
        notes.append("displayed form differs from the general theorem evaluated on the kernel's meta data")
    return ExampleResult(example, reg.p, reg.lu_exponent, c, q, theorem_c, theorem_q, consistent, inp, notes)
