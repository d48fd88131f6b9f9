
import pytest
from hypothesis import given, settings, strategies as st

from gaussojourn.kernels import (
    KernelSpec, ParameterError, covariance, fbm, meta, validate_tail, validate_s1, validate_s2,
    variance, variogram, weighted_fbm_quad,
)

ALL_SPECS = [
    fbm(0.7),
    KernelSpec("EX31", {"alpha": 1.5}),
    KernelSpec("SUBFBM", {"alpha": 1.2}),
    KernelSpec("NEGSUBFBM", {"alpha": 3.0}),
    KernelSpec("WEIGHTEDFBM", {"kappa": 0.5, "a": 1.5}),
    KernelSpec("WEIGHTEDFBM", {"kappa": 1.5, "a": 2.0}),
    KernelSpec("INTFBM", {"alpha": 0.5}),
    KernelSpec("TIMEAVGFBM", {"alpha": 1.5}),
    KernelSpec("DUALFBM", {"alpha": 1.5}),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.family.value}-{s.params}")
def test_unit_variance_at_one(spec):
    assert covariance(spec, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert variance(spec, 0.5) > 0


def test_covariance_examples():
    assert covariance(KernelSpec("EX31", {"alpha": 1.5}), 1.0, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert covariance(KernelSpec("DUALFBM", {"alpha": 1.5}), 2.0, 2.0) == pytest.approx(2**1.5, rel=1e-14)
    r12 = (1 * 2 + 2**1.5 * 1) / 3
    assert covariance(KernelSpec("DUALFBM", {"alpha": 1.5}), 1.0, 2.0) == pytest.approx(r12, rel=1e-14)


def test_weighted_fbm_closed_form_matches_quadrature():
    spec = KernelSpec("WEIGHTEDFBM", {"kappa": 0.5, "a": 1.5})
    for t, s in [(1.0, 1.0), (0.3, 0.9), (2.0, 0.7)]:
        assert covariance(spec, t, s) == pytest.approx(weighted_fbm_quad(0.5, 1.5, t, s, 1e-11), rel=1e-9)
    # frozen from a 30-digit mpmath quadrature of the defining integral
    assert covariance(spec, 0.3, 0.9) == pytest.approx(0.19127450099020735, rel=1e-12)


def test_variogram_examples():
    assert variogram(fbm(1.0), 0.0, 1.0) == pytest.approx(1.0)
    for spec in ALL_SPECS:
        assert variogram(spec, 0.6, 0.6) == 0.0
    h = 1e-4
    v = variogram(KernelSpec("EX31", {"alpha": 1.5}), 1 - h, 1.0) / h**1.5
    assert v == pytest.approx(2**-0.5, rel=0.01)


def test_meta_examples():
    m = meta(KernelSpec("SUBFBM", {"alpha": 1.0}))
    assert (m.alpha, m.kappa, m.c_Y, m.beta, m.R) == pytest.approx((1, 1, 1, 1, 1))
    m = meta(KernelSpec("NEGSUBFBM", {"alpha": 3.0}))
    assert (m.alpha, m.kappa, m.c_Y) == pytest.approx((3, 2, 3))
    m = meta(KernelSpec("TIMEAVGFBM", {"alpha": 1.5}))
    assert (m.alpha, m.kappa, m.c_Y, m.beta, m.R) == pytest.approx((1.5, 2, 1, 1, 1.75))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8, 1.0, 1.3, 1.7])
def test_intfbm_numeric_tail_constant(alpha):
    # expanding 1 - V(x, 1) by hand gives these closed forms; the package fits R numerically
    oracle = (alpha + 2) / (alpha + 1) if alpha < 1 else ((alpha + 2) / 2 if alpha > 1 else 3.0)
    m = meta(KernelSpec("INTFBM", {"alpha": alpha}))
    assert m.R_source == "numeric"
    assert m.R == pytest.approx(oracle, rel=2e-3)


def test_parameter_domains():
    with pytest.raises(ParameterError):
        KernelSpec("EX31", {"alpha": 2.0})
    with pytest.raises(ParameterError):
        KernelSpec("WEIGHTEDFBM", {"kappa": 0.5, "a": 1.0})
    with pytest.raises(ParameterError, match="FBM, EX31"):
        KernelSpec("NOPE", {})
    KernelSpec("NEGSUBFBM", {"alpha": 4.0})
    KernelSpec("FBM", {"kappa": 2.0})


def test_spec_roundtrip():
    spec = KernelSpec("WEIGHTEDFBM", {"kappa": 0.5, "a": 1.8})
    assert KernelSpec.from_json(spec.to_json()) == spec
    assert hash(KernelSpec.from_dict(spec.to_dict())) == hash(spec)


def test_validation_reports():
    assert validate_s1(fbm(0.7), tol=1e-10).passed
    assert validate_s1(KernelSpec("DUALFBM", {"alpha": 1.5}), tol=1e-10).passed
    rep = validate_s2(KernelSpec("SUBFBM", {"alpha": 1.2}), tol=0.02)
    assert rep.passed and rep.worst < 0.02
    assert validate_tail(KernelSpec("INTFBM", {"alpha": 0.5})).skipped


def test_s2_converges_monotonically():
    spec = KernelSpec("SUBFBM", {"alpha": 1.2})
    c = meta(spec).c_Y
    errs = [abs(variogram(spec, 1 - h, 1.0) / h**1.2 - c) for h in (1e-2, 1e-3, 1e-4)]
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=40, deadline=None)
@given(
    idx=st.integers(0, len(ALL_SPECS) - 1),
    t=st.floats(0.01, 10.0),
    s=st.floats(0.01, 10.0),
)
def test_symmetry_and_nonnegative_variogram(idx, t, s):
    spec = ALL_SPECS[idx]
    assert covariance(spec, t, s) == pytest.approx(covariance(spec, s, t), rel=1e-12, abs=1e-14)
    assert variogram(spec, t, s) >= 0.0


@settings(max_examples=25, deadline=None)
@given(idx=st.integers(0, len(ALL_SPECS) - 1), c=st.floats(0.05, 20.0), t=st.floats(0.05, 5.0), s=st.floats(0.05, 5.0))
def test_self_similarity(idx, c, t, s):
    spec = ALL_SPECS[idx]
    al = meta(spec).alpha
    assert covariance(spec, c * t, c * s) == pytest.approx(c**al * covariance(spec, t, s), rel=1e-9, abs=1e-12)


def test_origin_is_zero():
    for spec in ALL_SPECS:
        assert covariance(spec, 0.0, 0.7) == 0.0
        assert variance(spec, 0.0) == 0.0
