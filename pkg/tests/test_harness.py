import hashlib
import json

import numpy as np
import pytest

from entropic_lab.harness import (
    CSV_COLUMNS,
    THREADS_ENV,
    Record,
    SweepPlan,
    estimate_upsilon_c,
    ising_box_size,
    read_csv,
    resolve_threads,
    run_sweep,
    stream_seed,
    sweep_lambda_interface,
    sweep_lambda_ising,
    sweep_upsilon,
    upsilon_trend,
    write_csv,
)
from entropic_lab.model import ConfigError, InteractionU


def small_plan(**kw):
    d = dict(model="interface", param="lambda", grid=[1e-3, 1e-2, 1e-1], base={"dimension": 2, "N": 3},
             sweeps=300, burn_in=50, run_id="t", seed=1)
    d.update(kw)
    return SweepPlan(**d)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_ising_box_policy():
    assert ising_box_size(1e-1) == 20  # ceil(4 * 10^(2/3)) = 19 -> even
    assert ising_box_size(1e-3) == 256
    assert ising_box_size(1e-2) == 88
    assert ising_box_size(10.0) == 4
    sizes = [ising_box_size(lam) for lam in np.logspace(-3, -1, 8)]
    assert all(n % 2 == 0 for n in sizes) and sizes == sorted(sizes, reverse=True)


def test_plan_validation():
    with pytest.raises(ConfigError):
        small_plan(grid=[1e-3, 1e-1, 1e-2])
    with pytest.raises(ConfigError):
        small_plan(model="potts")
    with pytest.raises(ConfigError):
        small_plan(burn_in=300)
    with pytest.raises(ConfigError):
        small_plan(model="ising", param="upsilon")
    with pytest.raises(ConfigError):
        SweepPlan.from_dict({**small_plan().to_dict(), "colour": "red"})
    p = small_plan()
    assert SweepPlan.from_dict(p.to_dict()).plan_hash() == p.plan_hash()
    assert small_plan(seed=2).plan_hash() != p.plan_hash()


def test_threads_from_environment(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    with pytest.raises(ConfigError):
        resolve_threads(0)


def test_stream_seeds_are_distinct():
    states = {tuple(stream_seed(1, run, i).generate_state(2)) for run in ("a", "b") for i in range(5)}
    assert len(states) == 10
    assert stream_seed(1, "a", 0).generate_state(2).tolist() == stream_seed(1, "a", 0).generate_state(2).tolist()


def test_csv_round_trip(tmp_path):
    recs = [Record("r", "interface", "lambda", 0.1 * k + 1e-17, "mean_height", 1 / 3, 0.01, 2.5, 100)
            for k in range(3)]
    write_csv(tmp_path / "x.csv", recs)
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_csv(tmp_path / "x.csv") == recs


def test_sweep_resume_is_idempotent(tmp_path):
    plan = small_plan()
    run_sweep(plan, tmp_path)
    first = digest(tmp_path / "points" / "0001.json")
    res = run_sweep(plan, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["resumed_points"] == [0, 1, 2]
    assert digest(tmp_path / "points" / "0001.json") == first
    # a partially finished sweep completes to the same bytes
    (tmp_path / "points" / "0002.json").unlink()
    again = run_sweep(plan, tmp_path)
    assert [r.row() for r in again.records] == [r.row() for r in res.records]
    with pytest.raises(ConfigError):
        run_sweep(small_plan(seed=5), tmp_path)


def test_sweep_independent_of_thread_count():
    plan = small_plan(grid=[1e-3, 1e-2, 1e-1, 1.0])
    a = run_sweep(plan, threads=1)
    b = run_sweep(plan, threads=4)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]


def test_lambda_sweep_requirements():
    with pytest.raises(ConfigError):
        sweep_lambda_interface(small_plan(grid=[1e-2, 2e-2, 5e-2, 8e-2]))
    with pytest.raises(ConfigError):
        sweep_lambda_interface(small_plan(base={"dimension": 1, "N": 3}))
    with pytest.raises(ConfigError):
        sweep_upsilon(small_plan(param="upsilon", grid=[0.1, 1.0], base={"dimension": 2, "N": 3, "lambda": 0.1}))


def test_interface_lambda_sweep_fits(tmp_path):
    plan = small_plan(grid=[1e-4, 1e-3, 1e-2, 1e-1], sweeps=1500, burn_in=300)
    res = sweep_lambda_interface(plan, tmp_path)
    assert res.fit is not None and res.fit.axes == ("log_abslog", "log")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["plan_hash"] == plan.plan_hash()


def test_ising_lambda_sweep(tmp_path):
    plan = SweepPlan(model="ising", param="lambda", grid=[0.1, 0.2, 0.4, 0.8], base={"beta": 0.6, "N": 8},
                     sweeps=800, burn_in=100, thinning=4, run_id="i", seed=3)
    res = sweep_lambda_ising(plan, tmp_path)
    assert res.fit is not None
    for q in res.extra["ratio_quantiles"].values():
        assert 0 < q[0] <= q[-1] <= 1
    _, ratio, _ = res.table("ratio")
    assert np.all((ratio > 0) & (ratio <= 1))


def test_ising_box_policy_in_sweep():
    plan = SweepPlan(model="ising", param="lambda", grid=[0.5, 1.0], base={"beta": 0.6}, box_policy="ising",
                     measurements=20, burn_in_measurements=2, run_id="b")
    res = run_sweep(plan)
    assert [p.extra["N"] for p in res.points] == [ising_box_size(0.5), ising_box_size(1.0)]


def test_oracle_sweep_rows_are_tagged():
    plan = SweepPlan(model="oracle", param="lambda", grid=[1e-2, 1e-1], base={}, run_id="o",
                     observables=("mean_height",))
    recs = run_sweep(plan).records
    assert all(r.source == "oracle" for r in recs) and len(recs) == 2


def test_upsilon_trend_synthetic():
    ups = np.logspace(-4, -1, 6)
    h = np.sqrt(np.abs(np.log(ups)))
    t = upsilon_trend(ups, h, np.full(6, 1e-3))
    assert t.increasing_as_upsilon_decreases
    assert t.fit.exponent == pytest.approx(1.0, abs=1e-9)
    flat = upsilon_trend(ups, np.ones(6), np.full(6, 0.1))
    assert not flat.increasing_as_upsilon_decreases


def test_upsilon_sweep_live():
    plan = small_plan(param="upsilon", grid=[1e-3, 1e-1, 1e2], base={"dimension": 2, "N": 8},
                      sweeps=3000, burn_in=500)
    res, trend = sweep_upsilon(plan)
    assert trend.increasing_as_upsilon_decreases
    _, pinned, _ = res.table("pinned_fraction")
    assert pinned[-1] > 0.5


def test_crossover_synthetic_flat_is_open():
    c = estimate_upsilon_c(2, InteractionU(), [0.1, 1.0, 10.0], measure=lambda u, n: 0.3)
    assert c.lower is None and c.upper == 0.1 and not c.bounded
    c = estimate_upsilon_c(2, InteractionU(), [0.1, 1.0], measure=lambda u, n: 0.3 / n)
    assert c.lower == 1.0 and c.upper is None


def test_crossover_synthetic_flip():
    c = estimate_upsilon_c(2, InteractionU(), [0.1, 1.0, 10.0], measure=lambda u, n: u / (u + n ** (u < 1)))
    assert c.bounded and (c.lower, c.upper) == (0.1, 1.0)


def test_crossover_live_d2_has_positive_lower_edge():
    c = estimate_upsilon_c(2, InteractionU(), [0.01, 0.1, 1.0, 10.0], N=4, sweeps=3000, burn_in=500)
    assert c.lower is not None and c.lower > 0
    assert c.bounded


def test_crossover_live_d3_reaches_small_upsilon():
    # every upsilon > 0 localizes in d = 3, so no grid point should read as delocalized
    c = estimate_upsilon_c(3, InteractionU(), [0.01, 0.1, 1.0], N=4, sweeps=3000, burn_in=500)
    assert c.lower is None, c.table
