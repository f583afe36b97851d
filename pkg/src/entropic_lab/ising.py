"""Two-dimensional Ising model with bulk field and wall coupling.

Box {-N/2+1..N/2} x {0..N-1}; the boundary layer of the box is frozen by the
boundary condition and only interior spins evolve. Bonds between rows 0 and 1
carry coupling ``h``, every other bond coupling 1, and

    H(sigma) = -sum_<x,y> J(x,y) (sigma_x sigma_y - 1) - lam * sum_x sigma_x.

Equivalence with the boundary-field form. Take the interior
{-N/2+2..N/2-1} x {1..N-2} as a free box of side N-2 (shifted down by one
row). Its spins then feel the frozen layer as a field: +1 coupling from the
side and top layers and coupling h to the minus bottom row, which is exactly
-sum_<x,y> s_x s_y - lam sum s_x - sum_{d+} s_x + h sum_{d-} s_x on the free
box. The two Hamiltonians differ by a configuration-independent constant
collecting the frozen-frozen bonds, the -1 shifts and the field on the frame;
``boundary_form_energy`` evaluates the second form and the tests check that
the difference is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .contour import layer_measure
from .mcmc import make_rng
from .model import ConfigError
from .stats import EstimatorSeries

BETA_C = 0.5 * math.log(1.0 + math.sqrt(2.0))
BCS = ("plus", "minus", "pm")


@dataclass(frozen=True)
class IsingParams:
    beta: float = 0.6
    lam: float = 0.0
    h: float = 1.0
    N: int = 16
    bc: str = "pm"

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ConfigError("N must be even and >= 4")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.lam < 0:
            raise ConfigError("the bulk field lambda must be >= 0")
        if self.bc not in BCS:
            raise ConfigError(f"boundary condition must be one of {BCS}")

    def with_params(self, **changes) -> "IsingParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "lambda": self.lam, "h": self.h, "N": self.N, "bc": self.bc}

    @classmethod
    def from_dict(cls, d: dict) -> "IsingParams":
        try:
            return cls(
                beta=float(d.get("beta", 0.6)),
                lam=float(d.get("lambda", 0.0)),
                h=float(d.get("h", 1.0)),
                N=int(d["N"]),
                bc=str(d.get("bc", "pm")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad Ising config: {exc}") from exc


def boundary_mask(n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def boundary_values(n: int, bc: str) -> np.ndarray:
    """Spin values of the frozen layer (interior entries are meaningless)."""
    if bc == "plus":
        return np.ones((n, n), dtype=np.int8)
    if bc == "minus":
        return -np.ones((n, n), dtype=np.int8)
    v = np.ones((n, n), dtype=np.int8)
    v[:, 0] = -1  # sign(0) = -1
    return v


def site_index(n: int, x1: int, x2: int) -> tuple[int, int]:
    i = x1 + n // 2 - 1
    if not (0 <= i < n and 0 <= x2 < n):
        raise IndexError(f"site ({x1}, {x2}) outside the box")
    return i, x2


@dataclass
class SpinConfig:
    """Spins on the box; ``spins[x1 + N/2 - 1, x2]`` holds sigma at (x1, x2)."""

    N: int
    bc: str
    spins: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.spins = np.ascontiguousarray(self.spins, dtype=np.int8)
        if self.spins.shape != (self.N, self.N):
            raise ValueError("spin array does not match N")
        if not np.all(np.abs(self.spins) == 1):
            raise ValueError("spins must be +-1")
        mask = boundary_mask(self.N)
        if not np.array_equal(self.spins[mask], boundary_values(self.N, self.bc)[mask]):
            raise ValueError("boundary layer inconsistent with the boundary condition")

    @classmethod
    def ground(cls, params: IsingParams) -> "SpinConfig":
        """sign(x2) everywhere for pm, constant otherwise."""
        return cls(params.N, params.bc, boundary_values(params.N, params.bc).copy())

    @classmethod
    def from_interior(cls, params: IsingParams, interior) -> "SpinConfig":
        s = boundary_values(params.N, params.bc).copy()
        s[1:-1, 1:-1] = np.asarray(interior, dtype=np.int8).reshape(params.N - 2, params.N - 2)
        return cls(params.N, params.bc, s)

    @classmethod
    def random(cls, params: IsingParams, rng) -> "SpinConfig":
        rng = make_rng(rng)
        inner = np.where(rng.random((params.N - 2, params.N - 2)) < 0.5, 1, -1)
        return cls.from_interior(params, inner)

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.N, self.bc, self.spins.copy())

    def __getitem__(self, site) -> int:
        return int(self.spins[site_index(self.N, *site)])

    @property
    def magnetization(self) -> float:
        return float(self.spins.mean())


# ---------------------------------------------------------------------------
# energies


def ising_energy(params: IsingParams, config: SpinConfig) -> float:
    s = config.spins.astype(np.int64)
    horiz = np.sum(s[:-1, :] * s[1:, :] - 1)
    vert = s[:, :-1] * s[:, 1:] - 1
    inter = -(float(horiz) + params.h * float(vert[:, 0].sum()) + float(vert[:, 1:].sum()))
    return inter - params.lam * float(s.sum())


def interaction_energy(params: IsingParams, config: SpinConfig) -> float:
    return ising_energy(params.with_params(lam=0.0), config)


def boundary_form_energy(params: IsingParams, free_spins) -> float:
    """Energy with explicit boundary fields on a box whose spins are all free.

    ``free_spins`` has shape (M, M), row index x1 and column index x2 = 0..M-1.
    """
    s = np.asarray(free_spins, dtype=np.int64)
    bulk = np.sum(s[:-1, :] * s[1:, :]) + np.sum(s[:, :-1] * s[:, 1:])
    # exterior plus neighbours: left and right columns and the top row (corners have two)
    plus_count = np.zeros_like(s)
    plus_count[0, :] += 1
    plus_count[-1, :] += 1
    plus_count[:, -1] += 1
    d_plus = np.sum(s * plus_count)
    d_minus = np.sum(s[:, 0])
    return float(-bulk - params.lam * s.sum() - d_plus + params.h * d_minus)


# ---------------------------------------------------------------------------
# dynamics


@njit(cache=True, nogil=True)
def _local_field(s, i, j, lam, h):
    f = lam
    f += s[i - 1, j] + s[i + 1, j] + s[i, j + 1]
    f += (h if j == 1 else 1.0) * s[i, j - 1]
    return f


@njit(cache=True, nogil=True)
def _update(s, i, j, beta, lam, h, u):
    f = _local_field(s, i, j, lam, h)
    p_plus = 1.0 / (1.0 + math.exp(-2.0 * beta * f))
    new = 1 if u < p_plus else -1
    old = s[i, j]
    s[i, j] = new
    # f already includes lam
    return -f * (new - old)


@njit(cache=True, nogil=True)
def _sweep(s, beta, lam, h, rng):
    n = s.shape[0]
    de = 0.0
    for parity in range(2):
        for i in range(1, n - 1):
            start = 1 + ((i + 1 + parity) % 2)
            for j in range(start, n - 1, 2):
                de += _update(s, i, j, beta, lam, h, rng.random())
    return de


@njit(cache=True, nogil=True)
def _run(
    s, beta, lam, h, rng, n_sweeps, burn_in, thin, measure_layers, energy,
    ext, pa, pb, horiz, vert, below, cminus,
    out_mag, out_energy, out_lm, out_cm, out_len,
):
    m = 0
    nn = s.shape[0] * s.shape[1]
    for t in range(1, n_sweeps + 1):
        energy += _sweep(s, beta, lam, h, rng)
        if t > burn_in and (t - burn_in) % thin == 0 and m < out_mag.shape[0]:
            tot = 0
            for i in range(s.shape[0]):
                for j in range(s.shape[1]):
                    tot += s[i, j]
            out_mag[m] = tot / nn
            out_energy[m] = energy
            if measure_layers:
                length, nl, nc = layer_measure(s, ext, pa, pb, horiz, vert, below, cminus)
                if length < 0:
                    return energy, -(m + 1)
                out_lm[m] = nl
                out_cm[m] = nc
                out_len[m] = length
            m += 1
    return energy, m


def heat_bath_spin(params: IsingParams, config: SpinConfig, site, rng) -> SpinConfig:
    """Glauber heat-bath update of one interior spin, in place."""
    i, j = site_index(params.N, *site)
    if boundary_mask(params.N)[i, j]:
        raise ValueError("boundary spins are frozen by the boundary condition")
    rng = make_rng(rng)
    _update(config.spins, i, j, float(params.beta), float(params.lam), float(params.h), rng.random())
    return config


def flip_probability_plus(params: IsingParams, config: SpinConfig, site) -> float:
    i, j = site_index(params.N, *site)
    f = _local_field(config.spins, i, j, float(params.lam), float(params.h))
    return 1.0 / (1.0 + math.exp(-2.0 * params.beta * f))


def sweep_ising(params: IsingParams, config: SpinConfig, rng) -> float:
    """One checkerboard sweep over the interior; returns the energy change."""
    return float(_sweep(config.spins, float(params.beta), float(params.lam), float(params.h), make_rng(rng)))


class IsingChainResult(dict):
    config: SpinConfig
    manifest: dict


LAYER_OBSERVABLES = ("lambda_minus", "c_minus", "ratio", "contour_length")
ALL_OBSERVABLES = LAYER_OBSERVABLES + ("magnetization", "energy")


def default_thinning(n: int) -> int:
    return 2 * n


def run_ising_chain(
    params: IsingParams,
    sweeps: int,
    burn_in: int,
    observables=ALL_OBSERVABLES,
    seed=0,
    *,
    thinning: int | None = None,
    init: SpinConfig | None = None,
) -> IsingChainResult:
    """Heat-bath chain; layer observables need the pm boundary condition."""
    if not 0 <= burn_in < sweeps:
        raise ValueError("need 0 <= burn_in < sweeps")
    unknown = set(observables) - set(ALL_OBSERVABLES)
    if unknown:
        raise ConfigError(f"unknown Ising observables {sorted(unknown)}")
    layers = any(o in LAYER_OBSERVABLES for o in observables)
    if layers and params.bc != "pm":
        raise ConfigError("layer observables need the pm boundary condition")
    thin = default_thinning(params.N) if thinning is None else int(thinning)
    rng = make_rng(seed)
    config = (init.copy() if init is not None else SpinConfig.ground(params))
    n = params.N
    n_meas = (sweeps - burn_in) // thin
    ext = np.empty((n + 2, n + 2), dtype=np.int8)
    m = (n + 1) * (n + 1) * 2 + 4
    pa = np.empty(m, dtype=np.int64)
    pb = np.empty(m, dtype=np.int64)
    horiz = np.zeros((n + 1, n + 1), dtype=np.bool_)
    vert = np.zeros((n + 1, n + 1), dtype=np.bool_)
    below = np.zeros((n, n), dtype=np.bool_)
    cminus = np.zeros((n, n), dtype=np.bool_)
    out = {k: np.empty(n_meas) for k in ("mag", "energy", "lm", "cm", "len")}
    e0 = ising_energy(params, config)
    energy, got = _run(
        config.spins, float(params.beta), float(params.lam), float(params.h), rng,
        int(sweeps), int(burn_in), int(thin), layers, e0,
        ext, pa, pb, horiz, vert, below, cminus,
        out["mag"], out["energy"], out["lm"], out["cm"], out["len"],
    )
    if got < 0:
        from .contour import ContourError

        raise ContourError(f"open contour extraction failed at measurement {-got}")
    fresh = ising_energy(params, config)
    if abs(fresh - energy) > 1e-9 * max(1.0, abs(fresh)):
        raise RuntimeError(f"Ising energy drifted: {energy} vs {fresh}")
    series = {
        "magnetization": out["mag"],
        "energy": out["energy"],
        "lambda_minus": out["lm"],
        "c_minus": out["cm"],
        "contour_length": out["len"],
    }
    if layers:
        series["ratio"] = out["cm"] / out["lm"]
    res = IsingChainResult()
    sweep_idx = burn_in + thin * np.arange(1, n_meas + 1)
    for name in observables:
        res[name] = EstimatorSeries(name, series[name].copy(), sweeps=sweep_idx)
    res.config = config
    res.manifest = {
        "params": params.to_dict(),
        "sweeps": int(sweeps),
        "burn_in": int(burn_in),
        "thinning": int(thin),
        "visit_order": "checkerboard",
        "kernel": "heat_bath",
    }
    return res


# ---------------------------------------------------------------------------
# monotone coupling


class DominationError(RuntimeError):
    """The upper conditional probability fell below the lower one."""


@dataclass
class CouplingResult:
    upper: SpinConfig
    lower: SpinConfig
    p_upper: np.ndarray
    p_lower: np.ndarray
    violations: int
    approximate: bool

    @property
    def dominates(self) -> bool:
        return bool(np.all(self.upper.spins >= self.lower.spins))


class _ExactTable:
    """All interior configurations with their Gibbs weights (small boxes)."""

    def __init__(self, params: IsingParams, min_c_minus: int = 0):
        from .oracles import enumerate_states

        states, logw, obs = enumerate_states(params, with_layers=min_c_minus > 0)
        if min_c_minus > 0:
            keep = obs["c_minus"] >= min_c_minus
            states, logw = states[keep], logw[keep]
            if states.shape[0] == 0:
                raise ValueError("conditioning event has probability zero")
        self.states = states  # (M, n_free) int8
        self.w = np.exp(logw - logw.max())

    def prob_plus(self, mask: np.ndarray, site: int) -> float:
        w = self.w[mask]
        return float(w[self.states[mask, site] > 0].sum() / w.sum())


def _mc_prob_plus(params, min_c_minus, fixed, site, rng, samples):
    """Constrained Monte Carlo estimate of P(sigma_site = + | fixed spins, event)."""
    from .contour import LayerWorkspace

    n = params.N
    config = SpinConfig.ground(params)
    inner = config.spins[1:-1, 1:-1].reshape(-1)
    for k, v in fixed.items():
        inner[k] = v
    config.spins[1:-1, 1:-1] = inner.reshape(n - 2, n - 2)
    ws = LayerWorkspace(n) if min_c_minus > 0 else None
    if ws is not None and ws.measure(config.spins)[2] < min_c_minus:
        raise ValueError("initial configuration violates the conditioning event")
    free = [k for k in range(inner.size) if k not in fixed]
    hits = 0
    total = 0
    for t in range(samples):
        for k in free:
            i, j = 1 + k // (n - 2), 1 + k % (n - 2)
            old = config.spins[i, j]
            _update(config.spins, i, j, float(params.beta), float(params.lam), float(params.h), rng.random())
            if ws is not None and config.spins[i, j] != old and ws.measure(config.spins)[2] < min_c_minus:
                config.spins[i, j] = old
        if t >= samples // 5:
            kk = site
            total += 1
            hits += config.spins[1 + kk // (n - 2), 1 + kk % (n - 2)] > 0
    return hits / max(total, 1)


def sequential_monotone_coupling(
    params_upper: IsingParams,
    params_lower: IsingParams,
    seed=0,
    *,
    min_c_minus: int = 0,
    order=None,
    method: str = "auto",
    mc_samples: int = 400,
    strict: bool = True,
    tol: float = 1e-12,
) -> CouplingResult:
    """Couple two measures with shared uniforms, site by site.

    The lower measure may be conditioned on the non-increasing event
    ``|C^-| >= min_c_minus``. Conditional probabilities are exact (full
    enumeration) for small boxes; otherwise a constrained Monte Carlo estimate
    is used and the result is flagged approximate.
    """
    if params_upper.N != params_lower.N:
        raise ValueError("both measures must live on the same box")
    n = params_upper.N
    n_free = (n - 2) ** 2
    rng = make_rng(seed)
    order = list(range(n_free)) if order is None else list(order)
    if sorted(order) != list(range(n_free)):
        raise ValueError("order must be a permutation of the interior sites")
    if method == "auto":
        method = "exact" if n_free <= 16 else "mc"
    uniforms = rng.random(n_free)
    up = SpinConfig.ground(params_upper)
    lo = SpinConfig.ground(params_lower)
    p_up = np.empty(n_free)
    p_lo = np.empty(n_free)
    violations = 0
    if method == "exact":
        tu = _ExactTable(params_upper)
        tl = _ExactTable(params_lower, min_c_minus)
        mu = np.ones(tu.states.shape[0], dtype=bool)
        ml = np.ones(tl.states.shape[0], dtype=bool)
    else:
        fixed_u: dict = {}
        fixed_l: dict = {}
    for step, k in enumerate(order):
        if method == "exact":
            pu = tu.prob_plus(mu, k)
            pl = tl.prob_plus(ml, k)
        else:
            pu = _mc_prob_plus(params_upper, 0, fixed_u, k, rng, mc_samples)
            pl = _mc_prob_plus(params_lower, min_c_minus, fixed_l, k, rng, mc_samples)
        p_up[step], p_lo[step] = pu, pl
        if pu < pl - tol:
            violations += 1
            if strict and method == "exact":
                raise DominationError(f"step {step}: P_upper(+) = {pu} < P_lower(+) = {pl}")
        su = 1 if pu >= uniforms[step] else -1
        sl = 1 if pl >= uniforms[step] else -1
        i, j = 1 + k // (n - 2), 1 + k % (n - 2)
        up.spins[i, j] = su
        lo.spins[i, j] = sl
        if method == "exact":
            mu &= tu.states[:, k] == su
            ml &= tl.states[:, k] == sl
        else:
            fixed_u[k] = su
            fixed_l[k] = sl
    return CouplingResult(up, lo, p_up, p_lo, violations, method != "exact")
