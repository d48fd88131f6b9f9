import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaussojourn.berman import (
    BermanQuery, BermanTable, DomainError, DriftSpec, TableCurve, berman_paths, build_berman_table,
    check_scaling_identity, critical_level, critical_level_scan, critical_levels, estimate_berman,
    estimate_berman_curve, horizon_cutoff, sidecar_path,
)
from gaussojourn.kernels import KernelSpec, fbm
from gaussojourn.sampler import GridSpec
from gaussojourn.sojourn import WeightSpec


def test_critical_level_examples():
    f = np.array([-1.0, 0.5, -0.2])
    w = np.full(3, 0.1)
    assert critical_level(f, 0.0, w) == -0.5
    assert critical_level(f, 0.15, w) == pytest.approx(0.2)
    assert critical_level(np.zeros(3), 0.15, w) == 0.0
    with pytest.raises(DomainError):
        critical_level(f, 0.3, w)


def test_critical_level_ties_are_rounding_proof():
    # x a multiple of the cell weight: W(k) == x must not count as exceeding
    f = np.arange(10.0)[::-1]
    w = np.full(10, 0.1)
    w_noisy = w * (1 + np.array([3, -2, 1, -1, 2, -3, 1, 0, -1, 2]) * 1e-15)
    assert critical_level(f, 0.3, w) == critical_level(f, 0.3, w_noisy) == -f[3]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 40), frac=st.floats(0.0, 0.95))
def test_order_statistics_match_scan(seed, n, frac):
    rng = np.random.default_rng(seed)
    f = np.round(rng.normal(size=n), 3)
    w = rng.uniform(0.5, 1.5, size=n) * 0.01
    x = frac * w.sum()
    ys = np.round(np.arange(-5.0, 5.0, 1e-4), 4)
    assert critical_level(f, x, w) == pytest.approx(critical_level_scan(f, x, w, ys), abs=1.01e-4)


def test_vectorised_levels_agree_with_scalar():
    rng = np.random.default_rng(1)
    F = rng.normal(size=(30, 25))
    w = np.full(25, 0.04)
    xs = [0.0, 0.1, 0.5]
    Y = critical_levels(F, xs, w)
    for i in range(30):
        np.testing.assert_array_equal(Y[i], critical_level(F[i], np.array(xs), w))


def test_degenerate_closed_form():
    q = BermanQuery(None, DriftSpec.power(1.0, 1.0), x=0.3, T=None, normalized=False)
    e = estimate_berman(q)
    assert e.value == pytest.approx(math.exp(-0.3), rel=1e-14)
    assert e.std_error == 0.0
    # power weight: eta([0, b]) = b**2 / 2, so y* = h(sqrt(2x))
    q = BermanQuery(None, DriftSpec.power(2.0, 1.0), x=0.08, T=None, normalized=False, weight=WeightSpec.power(1.0))
    assert estimate_berman(q).value == pytest.approx(math.exp(-2 * 0.4), rel=1e-12)


def _kappa2_oracle(x, T, delta):
    """E exp(-y*) for the line t Z, by quadrature over Z on the same grid."""
    g = GridSpec.from_spacing(T, delta)
    t = g.points[:-1]
    w = np.full(t.size, g.spacing)
    zs = np.linspace(-10.0, math.sqrt(2) * T + 8.0, 40001)
    F = math.sqrt(2) * zs[:, None] * t[None, :] - t[None, :] ** 2
    y = critical_levels(F, [x], w)[:, 0]
    return np.trapezoid(np.exp(-zs**2 / 2 - y) / math.sqrt(2 * math.pi), zs) / T


@pytest.mark.parametrize("x", [0.0, 1.0, 2.0])
def test_tilted_estimator_matches_quadrature_for_line(x):
    T, delta = 10.0, 0.1
    e = estimate_berman(BermanQuery(fbm(2.0), x=x, T=T, delta=delta, n_paths=40_000, seed=3))
    assert abs(e.value - _kappa2_oracle(x, T, delta)) < 4 * e.std_error


def test_line_finite_horizon_closed_form():
    # E sup_{[0,T]} exp(sqrt(2) Z t - t^2) = T / sqrt(pi) + 1 in continuous time
    T = 10.0
    e = estimate_berman(BermanQuery(fbm(2.0), T=T, delta=0.002, n_paths=8000, seed=8))
    assert abs(e.value - (1 / math.sqrt(math.pi) + 1 / T)) < 4 * e.std_error + 1e-3


def test_direct_and_tilted_agree_on_short_horizon():
    q = dict(zeta=fbm(1.0), x=0.3, T=2.0, delta=0.02, n_paths=40_000)
    a = estimate_berman(BermanQuery(**q, seed=1))
    b = estimate_berman(BermanQuery(**q, seed=2, method="direct"))
    assert abs(a.value - b.value) < 4 * math.hypot(a.std_error, b.std_error)


def test_tilted_with_drift_and_dense_route():
    q = dict(zeta=KernelSpec("DUALFBM", {"alpha": 1.5}), drift=DriftSpec.power(0.5, 1.0), x=0.2, T=3.0,
             delta=0.03, n_paths=30_000, normalized=False)
    a = estimate_berman(BermanQuery(**q, seed=5))
    b = estimate_berman(BermanQuery(**q, seed=6, method="direct"))
    assert abs(a.value - b.value) < 4 * math.hypot(a.std_error, b.std_error)


def test_bounds_and_monotonicity_in_x():
    q = BermanQuery(fbm(1.0), drift=DriftSpec.power(0.1, 1.0), T=10.0, delta=0.05, n_paths=4000, seed=9)
    ests = estimate_berman_curve(q, [0.0, 0.2, 0.5, 1.0])
    assert all(e.value > 0 for e in ests)
    assert ests[0].value <= ests[0].bound
    vals = berman_paths(q, [0.0, 0.2, 0.5, 1.0])
    assert np.all(np.diff(vals, axis=1) <= 1e-12)


def test_normalised_estimate_stabilises_in_T():
    a = estimate_berman(BermanQuery(fbm(1.0), T=20.0, delta=0.02, n_paths=5000, seed=1))
    b = estimate_berman(BermanQuery(fbm(1.0), T=40.0, delta=0.02, n_paths=5000, seed=2))
    assert 0.8 <= a.value / b.value <= 1.2


def test_richardson_combination():
    q = BermanQuery(fbm(1.0), T=10.0, delta=0.04, n_paths=3000, seed=4, extrapolate=True)
    e = estimate_berman(q)
    (c, f) = e.raw
    r = 2**0.5
    assert e.extrapolated and f["delta"] == pytest.approx(c["delta"] / 2)
    assert e.value == pytest.approx((r * f["value"] - c["value"]) / (r - 1), rel=1e-12)
    assert f["value"] > c["value"]  # discrete suprema are biased low


def test_horizon_cutoff():
    T = horizon_cutoff(None, DriftSpec.power(1.0, 1.0))
    assert 40.0 <= T <= 40.0 * 1.011
    with pytest.raises(DomainError):
        horizon_cutoff(None, DriftSpec.zero())


def test_scaling_identity_domain_and_degenerate_case():
    with pytest.raises(DomainError):
        check_scaling_identity(KernelSpec("NEGSUBFBM", {"alpha": 3.0}), [0.0], n_paths=10)
    rep = check_scaling_identity(KernelSpec("SUBFBM", {"alpha": 1.0}), [0.0], T=4.0, delta=0.05, n_paths=2000)
    assert rep.c_Y == pytest.approx(1.0)
    assert rep.rows[0].lhs > 0 and rep.rows[0].rhs > 0


def test_table_roundtrip_and_interpolation(tmp_path):
    path = tmp_path / "tab.csv"
    xs = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]
    table = build_berman_table([1.0, 2.0], xs, T=10.0, delta=0.05, n_paths=3000, seed=1, extrapolate=False, path=path)
    assert (tmp_path / "tab.meta.json").exists() and sidecar_path(path).endswith("tab.meta.json")
    loaded = BermanTable.load(path)
    assert loaded.rows == table.rows
    assert loaded.metadata["kappas"] == [1.0, 2.0]
    cur = loaded.curve(2.0)
    assert abs(cur(0.0) - _kappa2_oracle(0.0, 10.0, 0.05)) < 4 * cur.std_error[0]
    assert np.all(cur.value > 0)
    grid = np.linspace(-1.0, 5.0, 200)
    vals = cur(grid)
    assert np.all(np.diff(vals) <= 1e-15)
    assert cur(-1.0) == cur(0.0)
    assert 0 < cur(5.0) < cur(2.0)
    with pytest.raises(DomainError, match="kappa=1.5"):
        loaded.curve(1.5)
    head = path.read_bytes().split(b"\r\n")[0]
    assert head == b"kappa,x,value,std_error,T,delta,n_paths,extrapolated"


def test_table_curve_tail_is_exponential():
    x = np.linspace(0.0, 3.0, 13)
    cur = TableCurve(1.0, x, np.exp(-x), np.zeros_like(x))
    assert cur(4.0) == pytest.approx(math.exp(-4.0), rel=1e-6)
    assert cur(1.1) == pytest.approx(math.exp(-1.1), rel=1e-3)


def test_query_validation():
    with pytest.raises(DomainError):
        BermanQuery(fbm(1.0), x=-1.0)
    with pytest.raises(DomainError):
        BermanQuery(fbm(1.0), T=0.0)
    with pytest.raises(DomainError):
        estimate_berman(BermanQuery(fbm(1.0), x=5.0, T=2.0, delta=0.1, n_paths=10))
