"""Markov chain samplers for the interface measure with atom, wall and field."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import ConfigError, HeightField, InterfaceModel, LatticeBox, _resolve_site, energy
from .stats import Estimate, EstimatorSeries, covariance

log = logging.getLogger(__name__)

KERNELS = {"heat_bath": K.KERNEL_HEAT_BATH, "metropolis": K.KERNEL_METROPOLIS}
DEFAULT_Q_ATOM = 0.2


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def default_q_atom(model: InterfaceModel) -> float:
    return DEFAULT_Q_ATOM if model.upsilon > 0 else 0.0


@dataclass
class ChainState:
    field: HeightField
    rng: np.random.Generator
    stream_id: object = None
    sweeps: int = 0
    energy: float = 0.0
    last_sweep_updates: int = 0

    @classmethod
    def start(cls, model: InterfaceModel, seed=0, init: HeightField | None = None) -> "ChainState":
        f = init.copy() if init is not None else HeightField.flat(model.box)
        return cls(f, make_rng(seed), stream_id=seed, energy=energy(model, f))

    def check_energy(self, model: InterfaceModel, rtol: float = 1e-8) -> float:
        fresh = energy(model, self.field)
        if abs(fresh - self.energy) > rtol * max(1.0, abs(fresh)):
            raise RuntimeError(f"cached energy {self.energy} drifted from recomputation {fresh}")
        return fresh


def _nb(model: InterfaceModel, state: ChainState, i: int) -> np.ndarray:
    nb = np.empty(2 * model.box.dimension)
    K.gather_neighbors(state.field.heights, model.box.neighbors, i, nb)
    return nb


def pin_probability(model: InterfaceModel, field: HeightField, site) -> float:
    """Probability that the heat-bath update of ``site`` lands on the atom."""
    i = _resolve_site(model.box, site)
    nb = np.empty(2 * model.box.dimension)
    K.gather_neighbors(field.heights, model.box.neighbors, i, nb)
    p = float(K.pin_probability(nb, *model.kernel_args(), float(model.upsilon), 0.0, math.inf))
    if not math.isfinite(p):
        raise FloatingPointError("quadrature failure in the single-site conditional")
    return p


def _apply(model, state, i, new, pin):
    nb = _nb(model, state, i)
    old = state.field.heights[i]
    if new != old:
        args = model.kernel_args()
        state.energy += float(K.site_energy(new, nb, *args) - K.site_energy(old, nb, *args))
    state.field.heights[i] = new
    state.field.pinned[i] = pin
    return state


def heat_bath_site(model: InterfaceModel, state: ChainState, site, rng=None) -> ChainState:
    """Resample one site from its exact conditional law (atom included)."""
    i = _resolve_site(model.box, site)
    rng = state.rng if rng is None else rng
    nb = _nb(model, state, i)
    new, pin = K.heat_bath_value(nb, *model.kernel_args(), float(model.upsilon), 0.0, math.inf, rng)
    return _apply(model, state, i, float(new), bool(pin))


def metropolis_site(
    model: InterfaceModel, state: ChainState, site, rng=None, proposal_width: float = 1.0, q_atom: float | None = None
) -> ChainState:
    if proposal_width <= 0:
        raise ValueError("proposal_width must be positive")
    i = _resolve_site(model.box, site)
    rng = state.rng if rng is None else rng
    q = default_q_atom(model) if q_atom is None else q_atom
    nb = _nb(model, state, i)
    new, pin = K.metropolis_value(
        bool(state.field.pinned[i]),
        float(state.field.heights[i]),
        nb,
        *model.kernel_args(),
        float(model.upsilon),
        float(proposal_width),
        float(q),
        rng,
    )
    return _apply(model, state, i, float(new), bool(pin))


def metropolis_acceptance(
    model: InterfaceModel, field: HeightField, site, current, proposed, proposal_width: float = 1.0, q_atom=None
) -> float:
    """Acceptance probability of moving ``site`` from ``current`` to ``proposed``."""
    from .model import PINNED, as_tagged

    i = _resolve_site(model.box, site)
    q = default_q_atom(model) if q_atom is None else q_atom
    cur, new = as_tagged(current), as_tagged(proposed)
    nb = np.empty(2 * model.box.dimension)
    K.gather_neighbors(field.heights, model.box.neighbors, i, nb)
    lr = K.metropolis_log_ratio(
        cur is PINNED, cur.value, new is PINNED, new.value, nb, *model.kernel_args(),
        float(model.upsilon), float(proposal_width), float(q),
    )
    return 1.0 if lr >= 0 else math.exp(lr)


def _order(box: LatticeBox, order: str) -> tuple[np.ndarray, bool]:
    if order == "checkerboard":
        return box.checkerboard_order.copy(), False
    if order == "random":
        return np.arange(box.n_sites, dtype=np.int64), True
    if order == "lexicographic":
        return np.arange(box.n_sites, dtype=np.int64), False
    raise ConfigError(f"unknown visit order {order!r}")


def sweep(
    model: InterfaceModel,
    state: ChainState,
    rng=None,
    kernel: str = "heat_bath",
    order: str = "checkerboard",
    proposal_width: float = 1.0,
    q_atom: float | None = None,
) -> ChainState:
    """Visit every site exactly once."""
    rng = state.rng if rng is None else rng
    idx, shuffle = _order(model.box, order)
    if shuffle:
        K.shuffle_inplace(idx, rng)
    q = default_q_atom(model) if q_atom is None else q_atom
    de, n = K.sweep_once(
        state.field.heights, state.field.pinned, model.box.neighbors, idx, *model.kernel_args(),
        float(model.upsilon), 0.0, math.inf, KERNELS[kernel], float(proposal_width), float(q), rng,
    )
    state.energy += float(de)
    state.sweeps += 1
    state.last_sweep_updates = int(n)
    return state


# ---------------------------------------------------------------------------
# chain driver


def _parse_coord(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.strip().strip("()").split(","))


@dataclass
class _Plan:
    record: list = field(default_factory=list)  # site indices recorded
    slabs: list = field(default_factory=list)
    cores: list = field(default_factory=list)
    wanted: list = field(default_factory=list)


def _plan_observables(box: LatticeBox, observables) -> _Plan:
    plan = _Plan()

    def site_slot(coord_text):
        i = box.index(_parse_coord(coord_text))
        if i not in plan.record:
            plan.record.append(i)
        return i

    for name in observables:
        kind, _, arg = name.partition(":")
        if kind in ("mean_height", "pinned_fraction", "energy", "penalty"):
            pass
        elif kind == "height":
            site_slot(arg)
        elif kind == "product" or kind == "cov":
            a, b = arg.split("|")
            site_slot(a)
            site_slot(b)
        elif kind == "slab_fraction":
            plan.slabs.append(float(arg))
        elif kind == "pinned_core":
            r = int(arg)
            if r < 0 or not (np.abs(box.coords).max(axis=1) <= r).any():
                raise ConfigError(f"core radius {r} selects no site")
            plan.cores.append(r)
        else:
            raise ConfigError(f"unknown observable {name!r}")
        plan.wanted.append(name)
    return plan


class ChainResult(dict):
    """Mapping observable name -> EstimatorSeries, plus the final chain state."""

    state: ChainState
    manifest: dict
    derived: dict


def run_chain(
    model: InterfaceModel,
    sweeps: int,
    burn_in: int,
    thinning: int = 1,
    observables=("mean_height", "pinned_fraction"),
    seed=0,
    *,
    kernel: str = "heat_bath",
    order: str = "checkerboard",
    proposal_width: float = 1.0,
    q_atom: float | None = None,
    init: HeightField | None = None,
    state: ChainState | None = None,
    penalty: tuple[float, float] | None = None,
) -> ChainResult:
    """Run ``sweeps`` sweeps (burn-in included) and collect measurements.

    Observables: ``mean_height``, ``pinned_fraction``, ``energy``,
    ``height:i,j``, ``product:i,j|k,l``, ``cov:i,j|k,l`` (derived),
    ``slab_fraction:ell``, ``pinned_core:r`` (pinned fraction over sites
    with max-norm at most r).
    """
    if not 0 <= burn_in < sweeps:
        raise ValueError("need 0 <= burn_in < sweeps")
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}")
    mu, ell = penalty if penalty is not None else (0.0, math.inf)
    if mu > 0 and kernel != "heat_bath":
        raise ConfigError("the soft slab penalty is only supported by the heat-bath kernel")
    plan = _plan_observables(model.box, observables)
    if state is None:
        state = ChainState.start(model, seed, init)
    idx, shuffle = _order(model.box, order)
    q = default_q_atom(model) if q_atom is None else q_atom
    n_meas = (sweeps - burn_in) // thinning
    rec = np.array(plan.record, dtype=np.int64)
    slabs = np.array(plan.slabs, dtype=float)
    cmax = np.abs(model.box.coords).max(axis=1)
    cores = np.array([cmax <= r for r in plan.cores], dtype=np.bool_).reshape(len(plan.cores), model.box.n_sites)
    out_core = np.empty((n_meas, len(plan.cores)))
    out_mean = np.empty(n_meas)
    out_pin = np.empty(n_meas)
    out_energy = np.empty(n_meas)
    out_pen = np.empty(n_meas)
    out_sites = np.empty((n_meas, rec.size))
    out_slab = np.empty((n_meas, slabs.size))
    en, updates = K.run_sweeps(
        state.field.heights, state.field.pinned, model.box.neighbors, idx, shuffle,
        *model.kernel_args(), float(model.upsilon), float(mu), float(ell),
        KERNELS[kernel], float(proposal_width), float(q), state.rng,
        int(sweeps), int(burn_in), int(thinning), rec, slabs, cores, float(state.energy),
        out_mean, out_pin, out_energy, out_sites, out_slab, out_pen, out_core,
    )
    state.energy = float(en)
    state.sweeps += sweeps
    state.check_energy(model)

    sweep_idx = state.sweeps - sweeps + burn_in + thinning * np.arange(1, n_meas + 1)
    col = {i: k for k, i in enumerate(plan.record)}
    result = ChainResult()
    result.derived = {}
    for name in plan.wanted:
        kind, _, arg = name.partition(":")
        if kind == "mean_height":
            vals = out_mean
        elif kind == "pinned_fraction":
            vals = out_pin
        elif kind == "energy":
            vals = out_energy
        elif kind == "penalty":
            vals = out_pen
        elif kind == "height":
            vals = out_sites[:, col[model.box.index(_parse_coord(arg))]]
        elif kind in ("product", "cov"):
            a, b = (model.box.index(_parse_coord(t)) for t in arg.split("|"))
            if kind == "cov":
                sa = EstimatorSeries(f"height:{a}", out_sites[:, col[a]].copy())
                sb = EstimatorSeries(f"height:{b}", out_sites[:, col[b]].copy())
                c = covariance(sa, sb)
                result.derived[name] = Estimate(name, c.mean, c.stderr, c.tau_int, c.n_samples)
                continue
            vals = out_sites[:, col[a]] * out_sites[:, col[b]]
        elif kind == "pinned_core":
            vals = out_core[:, plan.cores.index(int(arg))]
        else:  # slab_fraction
            vals = out_slab[:, plan.slabs.index(float(arg))]
        result[name] = EstimatorSeries(name, vals.copy(), sweeps=sweep_idx)
    result.state = state
    result.manifest = {
        "config_hash": model.config_hash(),
        "seed": _seed_repr(state.stream_id),
        "kernel": kernel,
        "sweeps": int(sweeps),
        "burn_in": int(burn_in),
        "thinning": int(thinning),
        "visit_order": order,
        "site_updates": int(updates),
    }
    return result


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return repr(seed)


# ---------------------------------------------------------------------------
# confinement free energy by thermodynamic integration


@dataclass
class ConfinementEstimate:
    value: float
    stderr: float
    mus: np.ndarray
    integrand: np.ndarray
    integrand_err: np.ndarray
    tail: float
    monotone: bool

    def __float__(self) -> float:
        return self.value


def default_schedule(mu_max: float = 1e3, points: int = 25) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-2, math.log10(mu_max), points)])


def _integrate(mus: np.ndarray, g: np.ndarray, se: np.ndarray) -> tuple[float, float]:
    """Trapezoid on [0, mu_1] then in log(mu); returns (integral, MC error)."""
    w = np.zeros_like(mus)
    if mus[0] != 0.0:
        raise ValueError("schedule must start at mu = 0")
    w[0] += 0.5 * mus[1]
    w[1] += 0.5 * mus[1]
    lm = np.log(mus[1:])
    dl = np.diff(lm)
    for k in range(dl.size):
        w[1 + k] += 0.5 * dl[k] * mus[1 + k]
        w[2 + k] += 0.5 * dl[k] * mus[2 + k]
    # tail beyond mu_max where the integrand decays like mu^(-3/2)
    w[-1] += 2.0 * mus[-1]
    return float(np.dot(w, g)), float(np.sqrt(np.dot(w**2, se**2)))


def estimate_confinement_free_energy(
    model: InterfaceModel,
    ell: float,
    schedule=None,
    *,
    sweeps: int = 2000,
    burn_in: int = 500,
    seed=0,
) -> ConfinementEstimate:
    """Per-site log-probability that every height stays in [0, ell].

    Ramps a soft penalty mu * sum max(X_i - ell, 0)^2 from 0 to mu_max and
    integrates its mean (thermodynamic integration). Uses the one-sided event
    under the hard-wall measure with lambda = upsilon = 0.
    """
    if ell <= 0:
        raise ValueError("ell must be positive")
    if model.lam != 0.0 or model.upsilon != 0.0:
        raise ConfigError("confinement free energy is defined for lambda = upsilon = 0")
    mus = default_schedule() if schedule is None else np.asarray(schedule, dtype=float)
    if mus[0] != 0.0 or np.any(np.diff(mus) <= 0):
        raise ValueError("schedule must start at 0 and increase strictly")
    state = ChainState.start(model, seed)
    g = np.empty(mus.size)
    se = np.empty(mus.size)
    for k, mu in enumerate(mus):
        res = run_chain(model, sweeps, burn_in, 1, ("penalty",), state=state, penalty=(float(mu), float(ell)))
        s = res["penalty"]
        g[k] = s.mean
        se[k] = s.stderr if np.isfinite(s.stderr) else 0.0
    # per-site integrand is the per-site mean penalty
    monotone = True
    for k in range(mus.size - 1):
        if g[k + 1] > g[k] + 3.0 * math.hypot(se[k], se[k + 1]) + 1e-300:
            monotone = False
    if not monotone:
        log.warning("confinement integrand is not monotone: the chain is probably not equilibrated")
    full, mc = _integrate(mus, g, se)
    keep = np.r_[0, np.arange(1, mus.size, 2)]
    if keep[-1] != mus.size - 1:
        keep = np.r_[keep, mus.size - 1]
    half, _ = _integrate(mus[keep], g[keep], se[keep])
    err = math.hypot(full - half, mc)
    return ConfinementEstimate(-full, err, mus, g, se, 2.0 * mus[-1] * g[-1], monotone)
