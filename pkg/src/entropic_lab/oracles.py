"""Deterministic ground truth: tensor-product quadrature for tiny interface
systems, a one-dimensional transfer operator, the height-scale equation and
exhaustive enumeration of small Ising boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit

from .contour import layer_measure
from .ising import IsingParams, SpinConfig, boundary_values, ising_energy
from .model import ConfigError, InteractionU, InterfaceModel, PotentialV


class OracleError(RuntimeError):
    """Raised when an oracle cannot reach its declared accuracy."""


# ---------------------------------------------------------------------------
# height grid


@dataclass(frozen=True)
class HeightGrid:
    """Uniform trapezoid grid on [0, x_max] plus the atom node at 0.

    Node 0 is the atom (weight ``upsilon``); nodes 1..n_points are the
    continuous grid.
    """

    x_max: float
    n_points: int
    upsilon: float = 0.0

    def __post_init__(self):
        if self.n_points < 3 or self.x_max <= 0:
            raise ValueError("grid needs x_max > 0 and at least 3 points")

    @property
    def spacing(self) -> float:
        return self.x_max / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([[0.0], np.linspace(0.0, self.x_max, self.n_points)])

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return np.concatenate([[self.upsilon], w])

    @property
    def is_atom(self) -> np.ndarray:
        m = np.zeros(self.n_points + 1, dtype=bool)
        m[0] = True
        return m

    def coarse(self) -> "HeightGrid":
        """Every other continuous node (doubled spacing)."""
        if (self.n_points - 1) % 2:
            raise ValueError("halving needs an even number of intervals")
        return HeightGrid(self.x_max, (self.n_points - 1) // 2 + 1, self.upsilon)

    def integrate(self, f) -> float:
        """Integral of f over the reference measure dx + upsilon delta_0."""
        return float(np.dot(self.weights, f(self.nodes)))


def richardson(fine: float, coarse: float, order: int = 2) -> tuple[float, float]:
    """Extrapolate two trapezoid results with spacing ratio 2."""
    k = 2**order
    est = (k * fine - coarse) / (k - 1)
    return est, abs(est - fine)


# ---------------------------------------------------------------------------
# tensor-product quadrature


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float
    fine: float
    coarse: float


def _box_edges(model: InterfaceModel):
    internal, external = [], []
    for i, j in model.box.edges():
        (external if j < 0 else internal).append((i, j))
    return internal, external


_OBS_ERR = "observable must be a callable or one of mean_height, pinned_fraction, height:<i>, pinned:<i>"


def _observable(obs, box):
    if callable(obs):
        return obs
    kind, _, arg = obs.partition(":")
    if kind == "mean_height":
        return lambda h, p: h.mean(axis=1)
    if kind == "pinned_fraction":
        return lambda h, p: p.mean(axis=1)
    if kind in ("height", "pinned"):
        if "," in arg:
            i = box.index(tuple(int(t) for t in arg.split(",")))
        else:
            i = int(arg)
        if kind == "height":
            return lambda h, p: h[:, i]
        return lambda h, p: p[:, i].astype(float)
    raise ValueError(_OBS_ERR)


def _tensor_sums(model: InterfaceModel, grid: HeightGrid, f) -> tuple[float, float]:
    n_sites = model.box.n_sites
    nodes, weights, atom = grid.nodes, grid.weights, grid.is_atom
    keep = weights > 0
    nodes, weights, atom = nodes[keep], weights[keep], atom[keep]
    m = nodes.size
    if m**n_sites > 1e8:
        raise OracleError(f"{m}^{n_sites} grid evaluations exceed the 1e8 budget")
    internal, external = _box_edges(model)
    u, v, lam = model.u, model.v, model.lam
    logw = np.log(weights)
    num = 0.0
    den = 0.0
    rest = n_sites - 1
    rest_idx = np.indices((m,) * rest).reshape(rest, -1).T if rest else np.zeros((1, 0), dtype=int)
    for a in range(m):
        idx = np.concatenate([np.full((rest_idx.shape[0], 1), a), rest_idx], axis=1)
        h = nodes[idx]
        p = atom[idx]
        e = np.zeros(idx.shape[0])
        for i, j in internal:
            e += u(h[:, i] - h[:, j])
        for i, _ in external:
            e += u(h[:, i])
        e += lam * v(h).sum(axis=1)
        lw = -e + logw[idx].sum(axis=1)
        w = np.exp(lw)
        num += float(np.dot(w, f(h, p)))
        den += float(w.sum())
    return num, den


def quadrature_expectation(
    model: InterfaceModel,
    observable="mean_height",
    *,
    grid: HeightGrid | None = None,
    x_max: float = 10.0,
    n_points: int | None = None,
    tol: float | None = None,
) -> QuadratureResult:
    """Expectation under the full measure of a system with at most four sites.

    Richardson extrapolation between the grid and its halving gives the value
    and a discretisation error estimate.
    """
    n_sites = model.box.n_sites
    if n_sites > 4:
        raise OracleError("quadrature oracle handles at most four sites")
    if grid is None:
        if n_points is None:
            n_points = {1: 4097, 2: 1025, 3: 257, 4: 65}[n_sites]
        grid = HeightGrid(x_max, n_points, model.upsilon)
    f = _observable(observable, model.box)
    nf, df = _tensor_sums(model, grid, f)
    nc, dc = _tensor_sums(model, grid.coarse(), f)
    fine, coarse = nf / df, nc / dc
    num, _ = richardson(nf, nc)
    den, _ = richardson(df, dc)
    value = num / den
    err = abs(value - fine)
    if tol is not None and err > tol:
        raise OracleError(f"grid too coarse: halving moves the result by {err:g}")
    return QuadratureResult(value, err, fine, coarse)


def quadrature_marginal(model: InterfaceModel, site: int = 0, *, x_max: float = 6.0, n_points: int = 2049):
    """Exact one-site marginal on a grid: (nodes, density, atom mass).

    The density is normalised together with the atom so that
    atom + trapezoid(density) = 1. Systems of at most two sites.
    """
    n_sites = model.box.n_sites
    if n_sites > 2:
        raise OracleError("the marginal oracle handles at most two sites")
    grid = HeightGrid(x_max, n_points, model.upsilon)
    nodes, weights = grid.nodes, grid.weights
    internal, external = _box_edges(model)
    u, v, lam = model.u, model.v, model.lam
    if n_sites == 1:
        logw = -(len(external) * u(nodes) + lam * v(nodes))
        w = np.exp(logw - logw.max())
        marg = w
    else:
        x = nodes[:, None]
        y = nodes[None, :]
        e = lam * (v(x) + v(y))
        for i, j in internal:
            e = e + u(x - y)
        for i, _ in external:
            e = e + u(x if i == 0 else y)
        e = e - e.min()
        w = np.exp(-e)
        other = 1 - site
        marg = (w * (weights[None, :] if site == 0 else weights[:, None])).sum(axis=other)
    atom = model.upsilon * marg[0]
    dens = marg[1:]
    z = atom + float(np.dot(weights[1:], dens))
    return nodes[1:], dens / z, atom / z


def marginal_bin_probabilities(model: InterfaceModel, edges, site: int = 0, *, x_max: float = 6.0, n_points: int = 2049):
    """Probability of each height bin [e_k, e_k+1); the last bin is open above
    and the atom falls in the first bin. Edges must sit on grid nodes."""
    nodes, dens, atom = quadrature_marginal(model, site, x_max=x_max, n_points=n_points)
    h = nodes[1] - nodes[0]
    idx = np.rint(np.asarray(edges, float) / h).astype(int)
    if not np.allclose(idx * h, edges, atol=1e-9 * x_max) or idx[-1] >= nodes.size:
        raise OracleError("bin edges must lie on grid nodes inside [0, x_max)")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (dens[1:] + dens[:-1]))])
    probs = np.diff(cum[idx])
    probs[0] += atom
    probs[-1] += cum[-1] - cum[idx[-1]]
    return probs


# ---------------------------------------------------------------------------
# one-dimensional transfer operator


@dataclass
class TransferKernel1D:
    """Symmetrised kernel A = G^1/2 T G^1/2 with T(x, y) = exp(-U(x - y)) and
    G = diag(node weight * exp(-lam V)) over a HeightGrid."""

    u: InteractionU
    v: PotentialV
    lam: float
    grid: HeightGrid

    def __post_init__(self):
        x = self.grid.nodes
        g = self.grid.weights * np.exp(-self.lam * self.v(x))
        self.sqrt_g = np.sqrt(g)
        self.matrix = self.sqrt_g[:, None] * np.exp(-self.u(x[:, None] - x[None, :])) * self.sqrt_g[None, :]
        self.boundary = self.sqrt_g * np.exp(-self.u(x))  # coupling to a zero neighbour
        self._eig = None

    def leading(self, method: str = "eigh", rtol: float = 1e-12, max_iter: int = 200000):
        """(eigenvalue, eigenvector, ratio of the second to the first eigenvalue)."""
        if self._eig is not None:
            return self._eig
        a = self.matrix
        n = a.shape[0]
        vals, vecs = scipy.linalg.eigh(a, subset_by_index=[n - 2, n - 1])
        lam0, lam1 = vals[1], vals[0]
        phi = vecs[:, 1]
        if method == "power":
            x = np.abs(phi) + 1e-3
            x /= np.linalg.norm(x)
            rq_old = 0.0
            for _ in range(max_iter):
                y = a @ x
                rq = float(x @ y)
                x = y / np.linalg.norm(y)
                if abs(rq - rq_old) <= rtol * abs(rq):
                    break
                rq_old = rq
            else:
                raise OracleError("power iteration did not converge")
            lam0, phi = rq, x
        phi = np.abs(phi)
        ratio = abs(lam1) / lam0
        if not ratio < 1.0:
            raise OracleError("leading eigenvalue is not simple")
        self._eig = (float(lam0), phi, float(ratio))
        return self._eig

    def bulk_marginal(self) -> np.ndarray:
        _, phi, _ = self.leading()
        p = phi**2
        return p / p.sum()

    def chain_marginal(self, length: int, site: int | None = None) -> np.ndarray:
        """Marginal of one site of a finite chain with zero at both ends."""
        if length < 1:
            raise ValueError("chain length must be >= 1")
        k = (length + 1) // 2 if site is None else site
        left = self._propagate(k - 1)
        right = self._propagate(length - k)
        p = left * right
        return p / p.sum()

    def _propagate(self, steps: int) -> np.ndarray:
        x = self.boundary.copy()
        for _ in range(steps):
            x = self.matrix @ x
            x /= np.linalg.norm(x)
        return x


def default_transfer_grid(v: PotentialV, lam: float, upsilon: float, n_points: int = 2049) -> HeightGrid:
    scale = max(1.0, solve_height_equation(v, lam)) if lam > 0 else 4.0
    return HeightGrid(10.0 * scale, n_points, upsilon)


@dataclass(frozen=True)
class TransferResult:
    mean_height: float
    error: float
    pinned_probability: float
    fine: float
    coarse: float


def transfer_mean_height(
    u: InteractionU,
    v: PotentialV,
    lam: float,
    upsilon: float = 0.0,
    chain_length: int | None = None,
    grid: HeightGrid | None = None,
    *,
    site: int | None = None,
    rtol: float | None = 5e-3,
) -> TransferResult:
    """Mean height of a one-dimensional chain.

    ``chain_length=None`` gives the bulk value from the leading eigenvector;
    otherwise the mid-chain (or ``site``) marginal of a finite chain with zero
    ends. Richardson extrapolation against the halved grid; ``rtol`` bounds
    the relative change under halving.
    """
    if chain_length is None and lam <= 0:
        raise OracleError("bulk extraction needs lam > 0 (no normalisable eigenvector otherwise)")
    grid = grid or default_transfer_grid(v, lam, upsilon)

    def one(g):
        tk = TransferKernel1D(u, v, lam, g)
        p = tk.bulk_marginal() if chain_length is None else tk.chain_marginal(chain_length, site)
        return float(np.dot(p, g.nodes)), float(p[0])

    mf, pf = one(grid)
    mc, pc = one(grid.coarse())
    m, err = richardson(mf, mc)
    pin, _ = richardson(pf, pc)
    if rtol is not None and abs(mf - mc) > rtol * abs(m):
        raise OracleError(f"grid halving changes the mean height by {abs(mf - mc) / abs(m):.2%}")
    return TransferResult(m, err, pin, mf, mc)


def transfer_slab_log_probability(u: InteractionU, length: int, ell: float, n_points: int = 1025) -> float:
    """Per-site log P(0 <= X_i <= ell for all i) for a zero-ended chain with a
    hard wall and no field or pinning."""

    def log_z(x_max):
        g = HeightGrid(x_max, n_points)
        tk = TransferKernel1D(u, PotentialV("linear"), 0.0, g)
        x = tk.boundary.copy()
        logz = 0.0
        for _ in range(length - 1):
            x = tk.matrix @ x
            s = np.linalg.norm(x)
            logz += math.log(s)
            x /= s
        return logz + math.log(float(x @ tk.boundary))

    wide = 10.0 * math.sqrt(length) + 10.0
    if ell >= wide:  # the slab holds essentially all the mass
        return 0.0
    return (log_z(ell) - log_z(wide)) / length


# ---------------------------------------------------------------------------
# height-scale equation


def solve_height_equation(v: PotentialV, lam: float) -> float:
    """Unique H > 0 with lam * H^2 * V(2H) = 1, by bisection in log H."""
    if lam <= 0:
        raise ValueError("lam must be positive")

    def f(h):
        return lam * h * h * float(v(2.0 * h)) - 1.0

    lo, hi = 1e-12, 1e12
    if f(lo) > 0 or f(hi) < 0:
        raise OracleError("root outside the bracket [1e-12, 1e12]")
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * math.ulp(hi):
            break
    # pick whichever bracket end has the smaller residual
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


# ---------------------------------------------------------------------------
# exhaustive Ising enumeration


MAX_FREE_SPINS = 20


@njit(cache=True)
def _enumerate(base, n_free, beta, lam, h, e0, with_layers, states, logw, mag, lm, cm, glen, energies):
    n = base.shape[0]
    inner = n - 2
    s = base.copy()
    for k in range(n_free):
        s[1 + k // inner, 1 + k % inner] = -1
    # the caller's e0 refers to the all-minus interior
    ext = np.empty((n + 2, n + 2), dtype=np.int8)
    m = (n + 1) * (n + 1) * 2 + 4
    pa = np.empty(m, dtype=np.int64)
    pb = np.empty(m, dtype=np.int64)
    horiz = np.zeros((n + 1, n + 1), dtype=np.bool_)
    vert = np.zeros((n + 1, n + 1), dtype=np.bool_)
    below = np.zeros((n, n), dtype=np.bool_)
    cminus = np.zeros((n, n), dtype=np.bool_)
    e = e0
    total = 1 << n_free
    nn = n * n
    msum = 0
    for i in range(n):
        for j in range(n):
            msum += s[i, j]
    for t in range(total):
        if t > 0:
            k = 0
            tt = t
            while tt & 1 == 0:
                tt >>= 1
                k += 1
            i = 1 + k // inner
            j = 1 + k % inner
            f = lam + s[i - 1, j] + s[i + 1, j] + s[i, j + 1] + (h if j == 1 else 1.0) * s[i, j - 1]
            old = s[i, j]
            e += 2.0 * old * f
            s[i, j] = -old
            msum -= 2 * old
        for k in range(n_free):
            states[t, k] = s[1 + k // inner, 1 + k % inner]
        energies[t] = e
        logw[t] = -beta * e
        mag[t] = msum / nn
        if with_layers:
            length, nl, nc = layer_measure(s, ext, pa, pb, horiz, vert, below, cminus)
            lm[t] = nl
            cm[t] = nc
            glen[t] = length


def enumerate_states(params: IsingParams, with_layers: bool = True):
    """All interior configurations with log-weights and per-state observables."""
    n = params.N
    n_free = (n - 2) ** 2
    if n_free > MAX_FREE_SPINS:
        raise OracleError(f"{n_free} free spins exceed the enumeration limit of {MAX_FREE_SPINS}")
    if with_layers and params.bc != "pm":
        with_layers = False
    base = boundary_values(n, params.bc).copy()
    start = base.copy()
    start[1:-1, 1:-1] = -1
    e0 = ising_energy(params, SpinConfig(n, params.bc, start))
    total = 1 << n_free
    states = np.empty((total, n_free), dtype=np.int8)
    logw = np.empty(total)
    mag = np.empty(total)
    lm = np.zeros(total)
    cm = np.zeros(total)
    glen = np.zeros(total)
    energies = np.empty(total)
    _enumerate(base, n_free, float(params.beta), float(params.lam), float(params.h), e0, with_layers,
               states, logw, mag, lm, cm, glen, energies)
    obs = {"magnetization": mag, "energy": energies}
    if with_layers:
        obs.update({"lambda_minus": lm, "c_minus": cm, "contour_length": glen, "ratio": cm / lm})
    return states, logw, obs


@dataclass(frozen=True)
class EnumerationResult:
    expectations: dict
    variances: dict
    ground: dict
    log_partition: float
    n_states: int


def ising_exact_enumeration(params: IsingParams, observables=None) -> EnumerationResult:
    """Exact expectations by summing over every interior configuration."""
    _, logw, obs = enumerate_states(params, with_layers=params.bc == "pm")
    names = list(obs) if observables is None else list(observables)
    for name in names:
        if name not in obs:
            raise ConfigError(f"observable {name!r} unavailable for bc={params.bc}")
    top = logw.max()
    w = np.exp(logw - top)
    z = w.sum()
    g = int(np.argmax(logw))
    exp_ = {k: float(np.dot(w, obs[k]) / z) for k in names}
    var = {k: float(np.dot(w, (obs[k] - exp_[k]) ** 2) / z) for k in names}
    ground = {k: float(obs[k][g]) for k in names}
    return EnumerationResult(exp_, var, ground, float(top + math.log(z)), int(logw.size))


# ---------------------------------------------------------------------------
# flood-fill layer oracle

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
_EIGHT = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class FloodFillLayers:
    lambda_minus: np.ndarray
    c_minus: np.ndarray
    contour_length: int
    above: np.ndarray  # window mask of the component above the contour


def layer_sets_floodfill(spins: np.ndarray) -> FloodFillLayers:
    """Layer sets from connected-component labelling, without any contour walk.

    With diagonal minus spins kept together, the open contour is the outer
    boundary of the 8-connected minus cluster of the exterior floor; the sites
    above it form the 4-connected component of its complement that contains
    the top collar row.
    """
    from scipy import ndimage

    from .contour import extended_window

    spins = np.asarray(spins, dtype=np.int8)
    n = spins.shape[0]
    ext = extended_window(spins)
    lab, _ = ndimage.label(ext < 0, structure=_EIGHT)
    floor = lab[1, 0]
    cluster = lab == floor
    lab2, _ = ndimage.label(~cluster, structure=_FOUR)
    above = lab2 == lab2[1, n + 1]
    lambda_minus = ~above[1 : n + 1, 1 : n + 1]
    lab3, _ = ndimage.label(spins < 0, structure=_FOUR)
    wall = np.unique(lab3[:, 0])
    wall = wall[wall > 0]
    c_minus = np.isin(lab3, wall) & lambda_minus
    pairs = int(np.sum(above[:-1, :] != above[1:, :]) + np.sum(above[:, :-1] != above[:, 1:]))
    return FloodFillLayers(lambda_minus, c_minus, pairs - 4, above)
