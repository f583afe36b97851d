"""Effective interface model: lattice box, interaction and potential families,
tagged height fields, energies and single-site conditional weights."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np

from . import _kernels as K


class ConfigError(ValueError):
    """Raised for invalid model or run configuration."""


# ---------------------------------------------------------------------------
# tagged heights


class _Pinned:
    """The atom at height 0."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Pinned"

    @property
    def value(self) -> float:
        return 0.0


PINNED = _Pinned()


@dataclass(frozen=True)
class Free:
    x: float

    def __post_init__(self):
        if not self.x > 0.0:
            raise ValueError(f"free height must be strictly positive, got {self.x}")

    @property
    def value(self) -> float:
        return self.x


Tagged = Union[Free, _Pinned]


def as_tagged(value) -> Tagged:
    """Turn a float (0.0 means the atom) or a tagged value into a tagged value."""
    if isinstance(value, (Free, _Pinned)):
        return value
    v = float(value)
    if v < 0.0:
        raise ValueError(f"negative height {v} violates the hard wall")
    return PINNED if v == 0.0 else Free(v)


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class LatticeBox:
    """The box {-N..N}^d. Sites outside are fixed at height 0.

    ``extents`` overrides the side lengths (sites then run over 0..L_k-1); it is
    used for the tiny one- and two-site systems of the exact oracles.
    """

    dimension: int
    radius: int
    extents: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if self.extents is None:
            if self.radius < 0:
                raise ConfigError("radius must be >= 0")
        else:
            if len(self.extents) != self.dimension or min(self.extents) < 1:
                raise ConfigError("extents must give one positive length per dimension")

    @property
    def shape(self) -> tuple[int, ...]:
        if self.extents is not None:
            return tuple(self.extents)
        return (2 * self.radius + 1,) * self.dimension

    @property
    def offset(self) -> int:
        return 0 if self.extents is not None else self.radius

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def __len__(self) -> int:
        return self.n_sites

    def index(self, coord) -> int:
        idx = tuple(int(c) + self.offset for c in coord)
        for c, L in zip(idx, self.shape):
            if not 0 <= c < L:
                raise IndexError(f"site {tuple(coord)} outside the box")
        return int(np.ravel_multi_index(idx, self.shape))

    def contains(self, coord) -> bool:
        return all(0 <= int(c) + self.offset < L for c, L in zip(coord, self.shape))

    def coord(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) - self.offset for c in np.unravel_index(index, self.shape))

    def sites(self):
        return (self.coord(i) for i in range(self.n_sites))

    @cached_property
    def coords(self) -> np.ndarray:
        grids = np.indices(self.shape).reshape(self.dimension, -1).T
        return grids - self.offset

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(n_sites, 2d) neighbor table; -1 marks a neighbor outside the box."""
        shape = self.shape
        idx = np.indices(shape).reshape(self.dimension, -1)
        out = np.empty((self.n_sites, 2 * self.dimension), dtype=np.int64)
        for axis in range(self.dimension):
            for s, step in enumerate((1, -1)):
                moved = idx.copy()
                moved[axis] += step
                inside = (moved[axis] >= 0) & (moved[axis] < shape[axis])
                flat = np.full(self.n_sites, -1, dtype=np.int64)
                flat[inside] = np.ravel_multi_index(tuple(moved[:, inside]), shape)
                out[:, 2 * axis + s] = flat
        out.setflags(write=False)
        return out

    @cached_property
    def is_boundary(self) -> np.ndarray:
        return (self.neighbors < 0).any(axis=1)

    @cached_property
    def checkerboard_order(self) -> np.ndarray:
        """Even sites first, then odd sites (two-colour sweep order)."""
        parity = (np.indices(self.shape).reshape(self.dimension, -1).sum(axis=0)) % 2
        return np.concatenate([np.flatnonzero(parity == 0), np.flatnonzero(parity == 1)]).astype(np.int64)

    def edges(self):
        """Edges touching the box as (i, j) with j == -1 for an exterior endpoint."""
        nbr = self.neighbors
        for i in range(self.n_sites):
            for j in nbr[i]:
                if j < 0 or j > i:
                    yield i, int(j)


# ---------------------------------------------------------------------------
# interaction and potential families


@dataclass(frozen=True)
class InteractionU:
    """Gradient interaction. ``quadratic``: x^2/2. ``perturbed``: x^2/2 + delta log cosh x."""

    family: str = "quadratic"
    delta: float = 0.0

    def __post_init__(self):
        if self.family not in ("quadratic", "perturbed"):
            raise ConfigError(f"unknown interaction family {self.family!r}")
        if self.family == "perturbed" and not 0.0 <= self.delta <= 1.0:
            raise ConfigError("perturbed interaction needs 0 <= delta <= 1")

    @property
    def code(self) -> int:
        return K.U_QUADRATIC if self.family == "quadratic" else K.U_PERTURBED

    @property
    def param(self) -> float:
        return float(self.delta) if self.family == "perturbed" else 0.0

    @property
    def curvature_bounds(self) -> tuple[float, float]:
        return (1.0, 1.0 + self.param)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.5 * x * x
        if self.family == "perturbed":
            ax = np.abs(x)
            out = out + self.delta * (ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0))
        return out

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "quadratic":
            return np.ones_like(x)
        return 1.0 + self.delta / np.cosh(x) ** 2


@dataclass(frozen=True)
class PotentialV:
    """External potential. ``linear``: x. ``power``: x^p with p >= 1."""

    family: str = "linear"
    p: float = 1.0

    def __post_init__(self):
        if self.family not in ("linear", "power"):
            raise ConfigError(f"unknown potential family {self.family!r}")
        if self.family == "power" and self.p < 1.0:
            raise ConfigError("power potential needs p >= 1")

    @property
    def code(self) -> int:
        return K.V_LINEAR if self.family == "linear" else K.V_POWER

    @property
    def param(self) -> float:
        return float(self.p) if self.family == "power" else 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "linear":
            return x * 1.0
        return np.where(x > 0.0, np.abs(x) ** self.p, 0.0)

    def growth_ratio(self, alpha: float, xs=None) -> float:
        """sup over a log grid of V(alpha x)/V(x); bounded for admissible V."""
        if xs is None:
            xs = np.logspace(-3, 6, 400)
        return float(np.max(self(alpha * xs) / self(xs)))


# ---------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class InterfaceModel:
    box: LatticeBox
    u: InteractionU = field(default_factory=InteractionU)
    v: PotentialV = field(default_factory=PotentialV)
    lam: float = 0.0
    upsilon: float = 0.0

    def __post_init__(self):
        if self.lam < 0.0:
            raise ConfigError("lambda must be >= 0")
        if self.upsilon < 0.0:
            raise ConfigError("upsilon must be >= 0")

    @property
    def pure_wetting(self) -> bool:
        """True for the lambda = 0 runs."""
        return self.lam == 0.0

    def with_params(self, **changes) -> "InterfaceModel":
        from dataclasses import replace

        return replace(self, **changes)

    def kernel_args(self) -> tuple:
        return (self.u.code, self.u.param, self.v.code, self.v.param, float(self.lam))

    def to_dict(self) -> dict:
        d = {
            "dimension": self.box.dimension,
            "N": self.box.radius,
            "interaction": {"family": self.u.family, "delta": self.u.delta},
            "potential": {"family": self.v.family, "p": self.v.p},
            "lambda": self.lam,
            "upsilon": self.upsilon,
        }
        if self.box.extents is not None:
            d["extents"] = list(self.box.extents)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "InterfaceModel":
        try:
            inter = d.get("interaction", {}) or {}
            pot = d.get("potential", {}) or {}
            if isinstance(inter, str):
                inter = {"family": inter}
            if isinstance(pot, str):
                pot = {"family": pot}
            extents = d.get("extents")
            box = LatticeBox(int(d["dimension"]), int(d.get("N", 0)), tuple(extents) if extents else None)
            return cls(
                box=box,
                u=InteractionU(inter.get("family", "quadratic"), float(inter.get("delta", 0.0))),
                v=PotentialV(pot.get("family", "linear"), float(pot.get("p", 1.0))),
                lam=float(d.get("lambda", 0.0)),
                upsilon=float(d.get("upsilon", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad interface model config: {exc}") from exc


# ---------------------------------------------------------------------------
# height fields


@dataclass
class HeightField:
    """Per-site heights; ``pinned[i]`` marks the atom (height exactly 0)."""

    box: LatticeBox
    heights: np.ndarray
    pinned: np.ndarray

    def __post_init__(self):
        self.heights = np.ascontiguousarray(self.heights, dtype=np.float64)
        self.pinned = np.ascontiguousarray(self.pinned, dtype=np.bool_)
        if self.heights.shape != (self.box.n_sites,) or self.pinned.shape != self.heights.shape:
            raise ValueError("field arrays do not match the box")
        if np.any(self.heights < 0.0):
            raise ValueError("negative heights violate the hard wall")
        if np.any(self.heights[self.pinned] != 0.0):
            raise ValueError("pinned sites must carry height 0")
        if np.any(self.heights[~self.pinned] <= 0.0):
            raise ValueError("free sites must carry strictly positive heights")

    @classmethod
    def flat(cls, box: LatticeBox) -> "HeightField":
        """All sites on the atom."""
        return cls(box, np.zeros(box.n_sites), np.ones(box.n_sites, dtype=bool))

    @classmethod
    def from_values(cls, box: LatticeBox, values) -> "HeightField":
        tags = [as_tagged(v) for v in values]
        if len(tags) != box.n_sites:
            raise ValueError("wrong number of values for the box")
        h = np.array([t.value for t in tags])
        return cls(box, h, np.array([t is PINNED for t in tags]))

    @classmethod
    def from_heights(cls, box: LatticeBox, heights) -> "HeightField":
        h = np.asarray(heights, dtype=float).reshape(-1)
        return cls(box, h.copy(), h == 0.0)

    def copy(self) -> "HeightField":
        return HeightField(self.box, self.heights.copy(), self.pinned.copy())

    def __getitem__(self, site: int) -> Tagged:
        return PINNED if self.pinned[site] else Free(float(self.heights[site]))

    def __setitem__(self, site: int, value) -> None:
        t = as_tagged(value)
        self.heights[site] = t.value
        self.pinned[site] = t is PINNED

    def grid(self) -> np.ndarray:
        return self.heights.reshape(self.box.shape)

    @property
    def pinned_fraction(self) -> float:
        return float(self.pinned.mean())

    @property
    def mean_height(self) -> float:
        return float(self.heights.mean())


def _resolve_site(box: LatticeBox, site) -> int:
    if isinstance(site, (tuple, list)):
        return box.index(site)
    site = int(site)
    if not 0 <= site < box.n_sites:
        raise IndexError(f"site {site} outside the box")
    return site


def _neighbor_heights(model: InterfaceModel, field: HeightField, site: int) -> np.ndarray:
    nb = np.empty(2 * model.box.dimension)
    K.gather_neighbors(field.heights, model.box.neighbors, site, nb)
    return nb


def energy(model: InterfaceModel, field: HeightField) -> float:
    """Sum of U over edges touching the box (exterior at 0) plus lambda * sum V."""
    if field.box != model.box:
        raise ValueError("field is defined on a different box")
    if np.any(field.heights < 0.0):
        raise ValueError("negative heights violate the hard wall")
    return float(K.total_energy(field.heights, model.box.neighbors, *model.kernel_args()))


def local_energy_delta(model: InterfaceModel, field: HeightField, site, new_height) -> float:
    """energy(after) - energy(before) for replacing the value at one site."""
    i = _resolve_site(model.box, site)
    new = as_tagged(new_height).value
    old = float(field.heights[i])
    if new == old:
        return 0.0
    nb = _neighbor_heights(model, field, i)
    args = model.kernel_args()
    return float(K.site_energy(new, nb, *args) - K.site_energy(old, nb, *args))


def conditional_weight(model: InterfaceModel, field: HeightField, site, x: float) -> tuple[float, float]:
    """Single-site conditional density (w, log w) at height x >= 0.

    The atom at 0 carries mass ``upsilon * w(0)`` on top of this density.
    """
    if x < 0.0:
        raise ValueError("conditional weight is only defined for x >= 0")
    i = _resolve_site(model.box, site)
    nb = _neighbor_heights(model, field, i)
    lw = float(K.log_weight(float(x), nb, *model.kernel_args(), 0.0, 0.0))
    return math.exp(lw), lw


def all_neighbor_pairs_symmetric(box: LatticeBox) -> bool:
    nbr = box.neighbors
    for i, row in enumerate(nbr):
        for j in row:
            if j >= 0 and i not in nbr[j]:
                return False
    return True


def box_symmetries(box: LatticeBox):
    """Coordinate permutations combined with reflections (hyperoctahedral group)."""
    d = box.dimension
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            yield perm, signs
