"""End-to-end acceptance checks shared by the test suite and ``report``.

Each check returns a :class:`CheckResult`; tolerances are module constants.
"""

from __future__ import annotations

import functools
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contour import extract_open_contour, layer_sets
from .fitting import fit_exponent
from .harness import SweepPlan, run_sweep, sweep_lambda_interface, sweep_lambda_ising
from .ising import IsingParams, SpinConfig, run_ising_chain
from .mcmc import make_rng, run_chain
from .model import InteractionU, InterfaceModel, LatticeBox, PotentialV
from .oracles import (
    ising_exact_enumeration,
    layer_sets_floodfill,
    marginal_bin_probabilities,
    quadrature_expectation,
    solve_height_equation,
    transfer_mean_height,
)

UPSILON_HALF = 0.62666  # sqrt(pi/8) to five digits: pinned probability 1/2 for a lone site
N_SIGMA = 3.0
TV_MAX = 0.02
D1_SLOPE_BAND = (-0.36, -0.30)
D2_NU_BAND = (0.7, 1.3)
ISING_SLOPE_BAND = (-0.45, -0.20)
HEIGHT_EQ_RESIDUAL = 1e-12
LOCALIZED_SPREAD = 0.10


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    summary: str
    data: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number}: {self.title} -- {self.summary}"


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        t0 = time.time()
        res = fn(*args, **kwargs)
        res.seconds = time.time() - t0
        return res

    return wrapper


def _joint(a, b):
    return math.hypot(a, b)


# ---------------------------------------------------------------------------
# 1. sampler vs quadrature


HIST_EDGES = np.arange(65) * (3.0 / 64)


@_timed
def sampler_vs_oracle(updates: int = 1_000_000, seed: int = 11) -> CheckResult:
    """Heat-bath and Metropolis against quadrature on one- and two-site systems."""
    u, v = InteractionU("quadratic"), PotentialV("linear")
    rows = []
    ok = True
    for box in (LatticeBox(2, 0), LatticeBox(2, 0, extents=(2, 1))):
        sweeps = updates // box.n_sites
        for ups in (0.0, UPSILON_HALF):
            for lam in (0.0, 1.0):
                model = InterfaceModel(box, u, v, lam, ups)
                p_exact = quadrature_expectation(model, "pinned_fraction").value
                bins = marginal_bin_probabilities(model, HIST_EDGES)
                for kernel in ("heat_bath", "metropolis"):
                    res = run_chain(model, sweeps, 1000, 1, ("pinned_fraction", "height:0,0"), seed=seed, kernel=kernel)
                    pin = res["pinned_fraction"]
                    h = res["height:0,0"].values
                    counts, _ = np.histogram(np.minimum(h, HIST_EDGES[-1] - 1e-12), bins=HIST_EDGES)
                    tv = 0.5 * float(np.abs(counts / h.size - bins).sum())
                    if ups == 0.0:
                        pin_ok = pin.mean == 0.0
                        z = 0.0
                    else:
                        z = (pin.mean - p_exact) / pin.stderr
                        pin_ok = abs(z) < N_SIGMA
                    good = pin_ok and tv < TV_MAX
                    ok &= good
                    rows.append({
                        "sites": box.n_sites, "upsilon": ups, "lambda": lam, "kernel": kernel,
                        "p_exact": p_exact, "p_mc": pin.mean, "stderr": pin.stderr, "z": z, "tv": tv, "ok": good,
                    })
    worst_tv = max(r["tv"] for r in rows)
    worst_z = max(abs(r["z"]) for r in rows)
    half = [r for r in rows if r["sites"] == 1 and r["upsilon"] > 0 and r["lambda"] == 0]
    summary = (
        f"{len(rows)} cases, max |z| = {worst_z:.2f} (< {N_SIGMA}), max TV = {worst_tv:.4f} (< {TV_MAX}); "
        f"p_pin at upsilon=sqrt(pi/8): " + ", ".join(f"{r['kernel']} {r['p_mc']:.4f}+-{r['stderr']:.4f}" for r in half)
    )
    return CheckResult(1, "sampler vs quadrature oracle", ok, summary, {"rows": rows})


# ---------------------------------------------------------------------------
# 2. d = 1 exponent


D1_LAMBDAS = np.logspace(-4, -1, 8)


@_timed
def transfer_exponent() -> CheckResult:
    u, v = InteractionU("quadratic"), PotentialV("linear")
    heights = np.array([transfer_mean_height(u, v, lam, 0.0).mean_height for lam in D1_LAMBDAS])
    fit = fit_exponent(D1_LAMBDAS, heights, None, ("log", "log"))
    ok = D1_SLOPE_BAND[0] <= fit.exponent <= D1_SLOPE_BAND[1]
    h_eq = np.array([solve_height_equation(v, lam) for lam in D1_LAMBDAS])
    summary = f"slope {fit.exponent:.4f}, band [{D1_SLOPE_BAND[0]}, {D1_SLOPE_BAND[1]}]"
    return CheckResult(2, "d=1 height exponent (transfer operator)", ok, summary,
                       {"lambda": D1_LAMBDAS.tolist(), "mean_height": heights.tolist(),
                        "height_scale": h_eq.tolist(), "fit": fit.to_dict()})


# ---------------------------------------------------------------------------
# 3. height equation


@_timed
def height_equation(cases: int = 100, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        lam = 10.0 ** rng.uniform(-6, 3)
        p = rng.uniform(1.0, 4.0)
        v = PotentialV("power", p)
        h = solve_height_equation(v, lam)
        worst = max(worst, abs(lam * h * h * float(v(2 * h)) - 1.0))
    fixed = [
        (PotentialV("linear"), 0.5, 1.0),
        (PotentialV("linear"), 4.0, 0.5),
        (PotentialV("power", 2.0), 1.0, 4.0**-0.25),
    ]
    fixed_err = max(abs(solve_height_equation(v, lam) - h) for v, lam, h in fixed)
    ok = worst < HEIGHT_EQ_RESIDUAL and fixed_err < 1e-12
    return CheckResult(3, "height-scale equation", ok,
                       f"max residual {worst:.2e} over {cases} cases, arithmetic cases off by {fixed_err:.1e}",
                       {"max_residual": worst, "fixed_error": fixed_err})


# ---------------------------------------------------------------------------
# 4. d = 2 scaling trend


def d2_plan(sweeps: int = 130_000, burn_in: int = 10_000, seed: int = 4, N: int = 64) -> SweepPlan:
    return SweepPlan(
        model="interface", param="lambda", grid=list(np.logspace(-4, -1, 8)),
        base={"dimension": 2, "N": N, "interaction": {"family": "quadratic"},
              "potential": {"family": "linear"}, "upsilon": 0.0},
        sweeps=sweeps, burn_in=burn_in, thinning=5, init_height=2.0,
        observables=("mean_height",), run_id="d2-lambda", seed=seed,
    )


@_timed
def d2_scaling(plan: SweepPlan | None = None, out_dir=None, threads=None) -> CheckResult:
    plan = plan or d2_plan()
    res = sweep_lambda_interface(plan, out_dir, threads)
    lam, m, s = res.table("mean_height")
    o = np.argsort(lam)[::-1]  # decreasing lambda
    lam, m, s = lam[o], m[o], s[o]
    gaps = [(m[i + 1] - m[i]) / _joint(s[i], s[i + 1]) for i in range(len(m) - 1)]
    mono = all(g > N_SIGMA for g in gaps)
    nu = res.fit.exponent if res.fit is not None else float("nan")
    nu_ok = D2_NU_BAND[0] <= nu <= D2_NU_BAND[1]
    summary = (f"nu = {nu:.3f} (band [{D2_NU_BAND[0]}, {D2_NU_BAND[1]}]) {'ok' if nu_ok else 'outside'}; "
               f"min consecutive gap {min(gaps):.1f} joint s.e. ({'ok' if mono else 'not separated'})")
    return CheckResult(4, "d=2 interface |log lambda| trend", nu_ok and mono, summary,
                       {"lambda": lam.tolist(), "mean": m.tolist(), "stderr": s.tolist(), "gaps": gaps,
                        "fit": None if res.fit is None else res.fit.to_dict(), "excluded": res.excluded})


# ---------------------------------------------------------------------------
# 5. Ising enumeration vs MC


@_timed
def ising_oracle(sweeps: int = 200_000, seed: int = 5) -> CheckResult:
    rows = []
    ok = True
    for lam in (0.0, 0.1, 0.5):
        p = IsingParams(beta=0.6, lam=lam, h=1.0, N=4, bc="pm")
        exact = ising_exact_enumeration(p).expectations
        res = run_ising_chain(p, sweeps, 1000, ("lambda_minus", "c_minus", "magnetization"), seed=seed, thinning=1)
        for name in ("lambda_minus", "c_minus", "magnetization"):
            s = res[name]
            z = (s.mean - exact[name]) / s.stderr
            good = abs(z) < N_SIGMA
            ok &= good
            rows.append({"lambda": lam, "observable": name, "exact": exact[name], "mc": s.mean,
                         "stderr": s.stderr, "z": z, "ok": good})
    worst = max(abs(r["z"]) for r in rows)
    return CheckResult(5, "Ising 4x4 enumeration vs MC", ok, f"{len(rows)} comparisons, max |z| = {worst:.2f}",
                       {"rows": rows})


# ---------------------------------------------------------------------------
# 6. Ising layer exponent


def ising_plan(measurements: int = 1000, burn_in_measurements: int = 100, seed: int = 6) -> SweepPlan:
    return SweepPlan(
        model="ising", param="lambda", grid=list(np.logspace(-3, -1, 8)),
        base={"beta": 0.6, "h": 1.0, "bc": "pm", "N": 16},
        sweeps=2, burn_in=0, box_policy="ising", measurements=measurements,
        burn_in_measurements=burn_in_measurements, run_id="ising-lambda", seed=seed,
    )


@_timed
def ising_scaling(plan: SweepPlan | None = None, out_dir=None, threads=None) -> CheckResult:
    plan = plan or ising_plan()
    res = sweep_lambda_ising(plan, out_dir, threads)
    slope = res.fit.exponent if res.fit is not None else float("nan")
    ok = ISING_SLOPE_BAND[0] <= slope <= ISING_SLOPE_BAND[1]
    lam, lm, _ = res.table("lambda_minus")
    _, cm, _ = res.table("c_minus")
    quant = res.extra["ratio_quantiles"]
    ratio_ok = all(0.0 < q[0] and q[-1] <= 1.0 for q in quant.values() if q)
    ci = "" if res.fit is None else f", 68% CI [{res.fit.ci_low:.3f}, {res.fit.ci_high:.3f}]"
    summary = (f"slope {slope:.3f}{ci}, band [{ISING_SLOPE_BAND[0]}, {ISING_SLOPE_BAND[1]}]; "
               f"|C-|/|Lambda-| medians " + ", ".join(f"{q[3]:.3f}" for q in quant.values() if q))
    return CheckResult(6, "Ising prewetting layer exponent", ok and ratio_ok, summary,
                       {"lambda": lam.tolist(), "lambda_minus": lm.tolist(), "c_minus": cm.tolist(),
                        "N": [p.extra["N"] for p in res.points], "ratio_quantiles": quant,
                        "fit": None if res.fit is None else res.fit.to_dict(), "excluded": res.excluded})


# ---------------------------------------------------------------------------
# 7. contour extraction


@_timed
def contour_oracle(samples: int = 10_000, N: int = 8, seed: int = 7) -> CheckResult:
    rng = make_rng(seed)
    params = IsingParams(N=N)
    mismatches = 0
    order_breaks = 0
    for _ in range(samples):
        c = SpinConfig.random(params, rng)
        oc = extract_open_contour(c)
        ls = layer_sets(oc, c)
        ref = layer_sets_floodfill(c.spins)
        if not (np.array_equal(ls.lambda_minus, ref.lambda_minus) and np.array_equal(ls.c_minus, ref.c_minus)
                and oc.length == ref.contour_length):
            mismatches += 1
        if ls.size_c_minus > ls.size_lambda_minus:
            order_breaks += 1
    ok = mismatches == 0 and order_breaks == 0
    return CheckResult(7, "contour extraction vs flood-fill oracle", ok,
                       f"{mismatches} mismatches and {order_breaks} |C-|>|Lambda-| cases in {samples} configurations",
                       {"mismatches": mismatches, "order_breaks": order_breaks})


# ---------------------------------------------------------------------------
# 8. wetting checks


def _chain(d, N, ups, sweeps, burn_in, seed, obs):
    model = InterfaceModel(LatticeBox(d, N), InteractionU("quadratic"), PotentialV("linear"), 0.0, ups)
    return run_chain(model, sweeps, burn_in, 2, obs, seed=seed)


@_timed
def wetting_checks(sweeps: int = 8000, burn_in: int = 2000, seed: int = 8, d3_N: int = 12) -> CheckResult:
    # (a) delocalized d = 2: pinned fraction falls as the box grows
    a16 = _chain(2, 16, 0.1, sweeps, burn_in, seed, ("pinned_fraction",))["pinned_fraction"]
    a32 = _chain(2, 32, 0.1, sweeps, burn_in, seed + 1, ("pinned_fraction",))["pinned_fraction"]
    ok_a = a16.mean - a32.mean > N_SIGMA * _joint(a16.stderr, a32.stderr)
    # (b) d = 3: height grows as the pinning weakens
    b_small = _chain(3, d3_N, 1e-3, sweeps, burn_in, seed + 2, ("mean_height",))["mean_height"]
    b_large = _chain(3, d3_N, 1e-1, sweeps, burn_in, seed + 3, ("mean_height",))["mean_height"]
    ok_b = b_small.mean - b_large.mean > N_SIGMA * _joint(b_small.stderr, b_large.stderr)
    # (c) strong pinning in d = 2 keeps the height bounded
    c16 = _chain(2, 16, 10.0, sweeps, burn_in, seed + 4, ("mean_height",))["mean_height"]
    c32 = _chain(2, 32, 10.0, sweeps, burn_in, seed + 5, ("mean_height",))["mean_height"]
    spread = abs(c32.mean - c16.mean) / c16.mean
    ok_c = spread < LOCALIZED_SPREAD
    summary = (f"(a) pinned fraction {a16.mean:.4f} -> {a32.mean:.4f} {'ok' if ok_a else 'FAIL'}; "
               f"(b) height {b_small.mean:.4f} vs {b_large.mean:.4f} {'ok' if ok_b else 'FAIL'}; "
               f"(c) relative change {spread:.3%} {'ok' if ok_c else 'FAIL'}")
    data = {
        "a": [a16.summary(), a32.summary()], "b": [b_small.summary(), b_large.summary()],
        "c": [c16.summary(), c32.summary()],
    }
    return CheckResult(8, "wetting qualitative checks", ok_a and ok_b and ok_c, summary, data)


# ---------------------------------------------------------------------------
# 9. reproducibility


def _repro_plans(seed: int) -> list[SweepPlan]:
    return [
        SweepPlan(model="interface", param="lambda", grid=[1e-3, 1e-2, 1e-1, 1.0],
                  base={"dimension": 2, "N": 6, "upsilon": 0.3}, sweeps=400, burn_in=100,
                  run_id="repro-interface", seed=seed),
        SweepPlan(model="ising", param="lambda", grid=[0.05, 0.1, 0.2, 0.4],
                  base={"beta": 0.6, "h": 1.0, "N": 10, "bc": "pm"}, sweeps=600, burn_in=100,
                  thinning=5, run_id="repro-ising", seed=seed),
    ]


@_timed
def reproducibility(seed: int = 9) -> CheckResult:
    outputs = {}
    with tempfile.TemporaryDirectory() as tmp:
        for label, threads in (("run1-t1", 1), ("run2-t1", 1), ("run3-t8", 8)):
            blobs = []
            for plan in _repro_plans(seed):
                out = Path(tmp) / label / plan.run_id
                res = run_sweep(plan, out, threads)
                res.write(out)
                blobs.append((out / "results.csv").read_bytes())
            outputs[label] = b"".join(blobs)
    same = len(set(outputs.values())) == 1
    return CheckResult(9, "reproducibility across runs and thread counts", same,
                       f"{len(outputs)} runs, {'byte-identical' if same else 'outputs differ'} CSV",
                       {"bytes": len(outputs["run1-t1"])})


CHECKS = {
    1: sampler_vs_oracle,
    2: transfer_exponent,
    3: height_equation,
    4: d2_scaling,
    5: ising_oracle,
    6: ising_scaling,
    7: contour_oracle,
    8: wetting_checks,
    9: reproducibility,
}
