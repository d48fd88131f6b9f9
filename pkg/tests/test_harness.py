import json
import math

import numpy as np
import pytest

from gaussojourn.asymptotics import psi
from gaussojourn.cli import main
from gaussojourn.harness import (
    ConfigError, Estimator, ExperimentConfig, Mode, estimate_ruin, estimate_ruin_crude, estimate_ruin_is,
    parse_config, run_config, run_ratio_experiment, shift_point, wilson,
)
from gaussojourn.kernels import KernelSpec, fbm
from gaussojourn.sojourn import TrendSpec

BM_RAW = dict(kernel=fbm(1.0), construction=Mode.RAW, n_points=129)


def _cfg(**kw):
    return ExperimentConfig(**{**BM_RAW, "u": [2.0], "n_paths": 4000, **kw})


MINIMAL = """{
  "name": "minimal",
  "kernel": {"family": "FBM", "params": {"kappa": 1.0}},
  "construction": "RAW",
  "u": [1.0, 2.0],
  "n_points": 65,
  "n_paths": 2000,
  "seed": 7
}
"""


def test_config_diagnostics_name_field_and_line():
    bad = MINIMAL.replace('"n_paths": 2000', '"n_paths": "many"')
    with pytest.raises(ConfigError) as e:
        parse_config(bad)
    assert e.value.field == "n_paths" and e.value.line == 7
    with pytest.raises(ConfigError) as e:
        parse_config(MINIMAL.replace('"u": [1.0, 2.0]', '"u": [2.0, 1.0]'))
    assert e.value.field == "u" and e.value.line == 5
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(MINIMAL.replace('"FBM"', '"NOPE"'))
    with pytest.raises(ConfigError) as e:
        parse_config('{"kernel": {"family": "FBM"},\n "u": [1,]}')
    assert e.value.line == 2
    with pytest.raises(ConfigError, match="unknown field"):
        parse_config('{"kernel": {"family": "FBM", "params": {"kappa": 1}}, "u": [1], "colour": 3}')
    with pytest.raises(ConfigError, match="T = 1"):
        parse_config('{"kernel": {"family": "FBM", "params": {"kappa": 1}}, "u": [1], "T": 2}')


def test_wilson_examples():
    lo, hi = wilson(0, 100)
    assert lo == 0.0 and 0.03 < hi < 0.04
    lo, hi = wilson(50, 100)
    assert lo == pytest.approx(1 - hi) and lo < 0.5 < hi


def test_trivial_limits():
    (row,) = estimate_ruin(_cfg(u=[-1e6], L=0.5, n_paths=500))
    assert row.estimate == 1.0 and row.ci_high == 1.0
    (row,) = estimate_ruin(_cfg(u=[0.0], L=1.0, n_paths=500))
    assert row.estimate == 0.0 and "insufficient_hits" in row.flags and row.ci_high > 0
    rows = estimate_ruin_crude(_cfg(u=[-1.0, 0.0, 1.0, 2.0], n_paths=2000)).rows
    for r in rows:
        assert 0.0 <= r.ci_low <= r.estimate <= r.ci_high <= 1.0


def test_zero_shift_importance_sampling_is_crude():
    cfg = _cfg(u=[0.0], n_paths=3000)
    (a,) = estimate_ruin_crude(cfg).rows
    (b,) = estimate_ruin_is(cfg).rows
    assert a.estimate == b.estimate and a.n_hits == b.n_hits


def test_shift_point_is_numerical():
    t = np.linspace(0, 1, 101)
    assert shift_point(1 - t, t, TrendSpec(), 2.0) == 0
    assert shift_point(t, t, TrendSpec(), 2.0) == 100
    # with a trend the maximiser moves inside: t / (2 + 4 t)^2 peaks at t = 1/2
    assert shift_point(t, t, TrendSpec(d=4.0, gamma=1.0), 2.0) == 50


def test_reflection_principle_small_budget():
    cfg = _cfg(u=[2.0], n_points=257, n_paths=40_000, refine=True, seed=3)
    exact = 2 * psi(2.0)
    for fn in (estimate_ruin_crude, estimate_ruin_is):
        (r,) = fn(cfg).rows
        assert abs(r.estimate - exact) < 3 * r.std_error
        assert r.coarse < r.fine  # the coarser grid misses crossings


def test_crude_and_is_overlap_across_replications():
    overlap = 0
    for seed in range(20):
        cfg = _cfg(u=[2.0], n_points=65, n_paths=2000, seed=seed)
        (a,) = estimate_ruin_crude(cfg).rows
        (b,) = estimate_ruin_is(cfg).rows
        overlap += a.ci_low <= b.ci_high and b.ci_low <= a.ci_high
    assert overlap >= 18


def test_paired_monotonicity():
    base = dict(construction=Mode.RISK_X, kernel=KernelSpec("EX31", {"alpha": 1.5}), n_points=129, n_paths=3000,
                trend=TrendSpec(1.0, 0.5), seed=5)
    rows = estimate_ruin(ExperimentConfig(u=[0.5, 1.0, 1.5, 2.0], L=0.05, **base))
    est = [r.estimate for r in rows]
    assert all(a >= b for a, b in zip(est, est[1:]))
    by_L = [estimate_ruin(ExperimentConfig(u=[1.0], L=L, **base))[0].estimate for L in (0.0, 0.05, 0.2)]
    assert by_L[0] >= by_L[1] >= by_L[2]
    by_d = [estimate_ruin(ExperimentConfig(u=[1.0, 1.5], L=0.05, **{**base, "trend": TrendSpec(d, 0.5)}))
            for d in (1.0, 2.0)]
    assert all(a.estimate > b.estimate for a, b in zip(*by_d))
    # raw Brownian motion: longer horizon, more ruin (0.134 vs 0.289, far apart at this budget)
    p1 = estimate_ruin(_cfg(u=[1.5], T=1.0, n_points=65, n_paths=20_000, seed=1))[0]
    p2 = estimate_ruin(_cfg(u=[1.5], T=2.0, n_points=129, n_paths=20_000, seed=1))[0]
    assert p1.estimate < p2.estimate


def test_theorem_exponent_and_ratio_experiment():
    cfg = ExperimentConfig(kernel=KernelSpec("EX31", {"alpha": 1.5}), u=[2.0, 3.0], L=1.0, trend=TrendSpec(1.0, 0.5),
                           lu_exponent="theorem", n_points=257, n_paths=5000, estimator=Estimator.MEANSHIFT_IS)
    rep = run_ratio_experiment(cfg)
    assert rep.regime["case"] == "III"
    for r in rep.rows:
        assert r.L_u == pytest.approx(r.u**-2)
        assert r.asymptotic == pytest.approx(0.1273698561484857 * psi(r.u), rel=1e-12)
        assert math.isfinite(r.ratio) and r.ratio_ci_low <= r.ratio <= r.ratio_ci_high
        assert r.ess > 100 and not r.flags


def _write(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_config_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    a = run_config(cfg, out_dir=str(tmp_path / "a"), threads=1)
    b = run_config(cfg, out_dir=str(tmp_path / "b"), threads=3)
    for name in ("report.json", "estimates.csv", "estimate_vs_u.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "runtime.json").exists()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["seed"] == 7 and len(rep["rows"]) == 2 and "runtime" not in rep
    assert (tmp_path / "a" / "estimates.csv").read_bytes().startswith(b"u,L_u,estimate,")
    assert a.endswith("a") and b.endswith("b")


def test_out_dir_environment_override(tmp_path, monkeypatch):
    cfg = _write(tmp_path, MINIMAL)
    monkeypatch.setenv("GAUSSOJOURN_OUT_DIR", str(tmp_path / "env"))
    run_config(cfg)
    assert (tmp_path / "env" / "report.json").exists()


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    assert main(["experiment", "run", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "estimates.csv").exists()
    bad = _write(tmp_path, MINIMAL.replace('"FBM"', '"NOPE"'), "bad.json")
    assert main(["experiment", "run", bad, "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("gaussojourn: error:") and "EX31" in err and "WEIGHTEDFBM" in err
    assert main(["kernels", "validate", "NOPE:alpha=1", "--out-dir", str(tmp_path / "k")]) == 2


def test_cli_commands_are_deterministic(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    commands = [
        ["kernels", "validate", "EX31:alpha=1.5"],
        ["sample", "DUALFBM:alpha=1.5", "--n-points", "33", "--n-paths", "700"],
        ["berman", "estimate", "--x", "0,0.5", "--T", "5", "--delta", "0.05", "--n-paths", "700"],
        ["asymptotics", "classify", "EX31:alpha=1.5", "--d", "1", "--L", "1"],
        ["asymptotics", "constant", "--example", "3.1", "--alpha", "1.5", "--d", "1", "--L", "1"],
        ["ruin", "is", cfg],
    ]
    for cmd in commands:
        outs = []
        for i, threads in enumerate(("1", "4")):
            d = tmp_path / f"{cmd[0]}-{cmd[1]}-{i}"
            assert main(cmd + ["--seed", "11", "--threads", threads, "--out-dir", str(d)]) in (0, 1)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "runtime.json"})
        assert outs[0] == outs[1] and outs[0], cmd


def test_case_ii_run_with_berman_table(tmp_path):
    from gaussojourn.berman import build_berman_table

    build_berman_table([0.5], [0, 0.5, 1, 2, 4, 8, 16], T=20.0, delta=0.05, n_paths=500, seed=1,
                       extrapolate=False, path=tmp_path / "tab.csv")
    cfg = {
        "name": "case2", "kernel": {"family": "WEIGHTEDFBM", "params": {"kappa": 0.5, "a": 1.8}},
        "trend": {"d": 1.0, "gamma": 0.9}, "u": [2.0, 3.0], "L": 1.0, "lu_exponent": "theorem",
        "n_points": 129, "n_paths": 2000, "estimator": "MEANSHIFT_IS",
        "asymptotics": {"enabled": True, "case": "II", "berman_table": "tab.csv"}, "seed": 1,
    }
    path = _write(tmp_path, json.dumps(cfg, indent=1))
    out = run_config(path, out_dir=str(tmp_path / "out"))
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["regime"]["case"] == "II" and rep["regime"]["c"] > 0
    assert rep["regime"]["p"] == pytest.approx(rep["regime"]["epsilon"] * 1.3 / 0.8)
    assert all(math.isfinite(r["ratio"]) for r in rep["rows"])
    curve = (tmp_path / "out" / "berman_0.5.tsv").read_text().splitlines()
    assert curve[0] == "x\tvalue\tstd_error" and len(curve) == 8
    assert out.endswith("out")
