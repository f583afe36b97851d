"""Open Peierls contour of a +- configuration and the layer sets below it.

Coordinates. The Ising box is {-N/2+1..N/2} x {0..N-1}; a spin array ``s``
of shape (N, N) stores site (x1, x2) at ``s[x1 + N/2 - 1, x2]``. The extended
window ``ext`` of shape (N+2, N+2) adds a one-site collar: ``ext[c1, c2]`` is
site (c1 - N/2, c2 - 1). Dual vertex (a, b), 0 <= a, b <= N, is the corner
shared by window cells (a, b), (a+1, b), (a, b+1), (a+1, b+1), i.e. the real
point (a - N/2 + 1/2, b - 1/2).

Crossings. Where four disagreement edges meet, the curve keeps the two
diagonal minus spins on the same side: walking with minus on the right, the
walker turns left. Any fixed choice gives a simple curve; this one makes the
region below the contour the 8-connected minus cluster of the bottom
exterior together with everything it encloses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

# directions: east, north, west, south
_DA = np.array([1, 0, -1, 0], dtype=np.int64)
_DB = np.array([0, 1, 0, -1], dtype=np.int64)


class ContourError(RuntimeError):
    """Raised when the disagreement set does not contain a valid open contour."""


def extend_config(spins: np.ndarray):
    """Lazy extension of a box configuration to Z^2.

    Outside the box the extension is -1 below the wall (x2 < 0) and +1
    elsewhere. Returns a callable ``value(x1, x2)``.
    """
    spins = np.asarray(spins)
    n = spins.shape[0]
    half = n // 2

    def value(x1: int, x2: int) -> int:
        i = x1 + half - 1
        if 0 <= i < n and 0 <= x2 < n:
            return int(spins[i, x2])
        return -1 if x2 < 0 else 1

    value.n = n
    value.spins = spins
    return value


def extended_window(spins: np.ndarray) -> np.ndarray:
    """Extension restricted to the box plus a one-site collar."""
    spins = np.asarray(spins, dtype=np.int8)
    n = spins.shape[0]
    ext = np.ones((n + 2, n + 2), dtype=np.int8)
    ext[:, 0] = -1
    ext[1 : n + 1, 1 : n + 1] = spins
    return ext


@njit(cache=True, nogil=True)
def _edge_present(ext, a, b, d):
    # d: 0 east, 1 north, 2 west, 3 south; edge leaving vertex (a, b)
    if d == 0:
        return ext[a + 1, b] != ext[a + 1, b + 1]
    if d == 1:
        return ext[a, b + 1] != ext[a + 1, b + 1]
    if d == 2:
        return ext[a, b] != ext[a, b + 1]
    return ext[a, b] != ext[a + 1, b]


@njit(cache=True, nogil=True)
def _inside(n, a, b, d):
    a2 = a + _DA[d]
    b2 = b + _DB[d]
    return 0 <= a2 <= n and 0 <= b2 <= n


@njit(cache=True, nogil=True)
def _mark(horiz, vert, a, b, d):
    # horiz[a, b]: edge (a, b)-(a+1, b); vert[a, b]: edge (a, b)-(a, b+1)
    if d == 0:
        horiz[a, b] = True
    elif d == 2:
        horiz[a - 1, b] = True
    elif d == 1:
        vert[a, b] = True
    else:
        vert[a, b - 1] = True


@njit(cache=True, nogil=True)
def _is_marked(horiz, vert, a, b, d):
    if d == 0:
        return horiz[a, b]
    if d == 2:
        return horiz[a - 1, b]
    if d == 1:
        return vert[a, b]
    return vert[a, b - 1]


@njit(cache=True, nogil=True)
def _next_dir(ext, n, a, b, heading):
    """Outgoing direction at vertex (a, b) when arriving with ``heading``."""
    back = (heading + 2) % 4
    deg = 0
    for d in range(4):
        if _inside(n, a, b, d) and _edge_present(ext, a, b, d):
            deg += 1
    if deg == 4:
        return (heading + 1) % 4
    if deg != 2:
        return -1
    for d in range(4):
        if d != back and _inside(n, a, b, d) and _edge_present(ext, a, b, d):
            return d
    return -1


@njit(cache=True, nogil=True)
def _walk_open(ext, path_a, path_b, horiz, vert):
    """Walk from dual vertex (0, 1) to (n, 1); returns path length or -1."""
    n = ext.shape[0] - 2
    a = 0
    b = 1
    heading = 1  # arrived from the south stub
    path_a[0] = a
    path_b[0] = b
    steps = 0
    limit = path_a.shape[0] - 1
    while not (a == n and b == 1):
        d = _next_dir(ext, n, a, b, heading)
        if d < 0 or steps >= limit:
            return -1
        _mark(horiz, vert, a, b, d)
        a += _DA[d]
        b += _DB[d]
        heading = d
        steps += 1
        path_a[steps] = a
        path_b[steps] = b
    return steps


@njit(cache=True, nogil=True)
def _closed_loops(ext, horiz, vert):
    """Walk every remaining disagreement edge into closed loops.

    Returns (number of loops, total loop length) or (-1, -1) on failure.
    """
    n = ext.shape[0] - 2
    # stubs below the two endpoints belong to the infinite contour
    vert[0, 0] = True
    vert[n, 0] = True
    loops = 0
    total = 0
    for a0 in range(n + 1):
        for b0 in range(n + 1):
            for d0 in (0, 1):
                if not _inside(n, a0, b0, d0) or not _edge_present(ext, a0, b0, d0):
                    continue
                if _is_marked(horiz, vert, a0, b0, d0):
                    continue
                # orient so that the minus cell lies on the right
                if d0 == 0:
                    minus_right = ext[a0 + 1, b0] < 0
                else:
                    minus_right = ext[a0 + 1, b0 + 1] < 0
                if minus_right:
                    a, b, d = a0, b0, d0
                else:
                    a, b, d = a0 + _DA[d0], b0 + _DB[d0], (d0 + 2) % 4
                sa, sb, sd = a, b, d
                length = 0
                while True:
                    _mark(horiz, vert, a, b, d)
                    a += _DA[d]
                    b += _DB[d]
                    length += 1
                    if a == sa and b == sb:
                        nd = _next_dir(ext, n, a, b, d)
                        if nd == sd:
                            break
                    nd = _next_dir(ext, n, a, b, d)
                    if nd < 0 or length > 4 * (n + 2) * (n + 2):
                        return -1, -1
                    d = nd
                loops += 1
                total += length
    return loops, total


@njit(cache=True, nogil=True)
def _flood_below(horiz, vert, n, out):
    """Sites of the box lying below the contour.

    Fills the region above from the top row (all plus, never cut by the
    contour) without crossing contour edges and returns the complement. The
    fill runs on the plus side because split crossings keep diagonal minus
    cells together, which a 4-neighbour fill from below could not follow.
    """
    above = np.zeros((n, n), dtype=np.bool_)
    stack_i = np.empty(n * n, dtype=np.int64)
    stack_j = np.empty(n * n, dtype=np.int64)
    top = 0
    for i in range(n):
        above[i, n - 1] = True
        stack_i[top] = i
        stack_j[top] = n - 1
        top += 1
    while top > 0:
        top -= 1
        i = stack_i[top]
        j = stack_j[top]
        c1 = i + 1
        c2 = j + 1
        # east: crosses vertical dual edge vert[c1, c2 - 1]
        if i + 1 < n and not above[i + 1, j] and not vert[c1, c2 - 1]:
            above[i + 1, j] = True
            stack_i[top] = i + 1
            stack_j[top] = j
            top += 1
        if i - 1 >= 0 and not above[i - 1, j] and not vert[c1 - 1, c2 - 1]:
            above[i - 1, j] = True
            stack_i[top] = i - 1
            stack_j[top] = j
            top += 1
        # north: crosses horizontal dual edge horiz[c1 - 1, c2]
        if j + 1 < n and not above[i, j + 1] and not horiz[c1 - 1, c2]:
            above[i, j + 1] = True
            stack_i[top] = i
            stack_j[top] = j + 1
            top += 1
        if j - 1 >= 0 and not above[i, j - 1] and not horiz[c1 - 1, c2 - 1]:
            above[i, j - 1] = True
            stack_i[top] = i
            stack_j[top] = j - 1
            top += 1
    count = 0
    for i in range(n):
        for j in range(n):
            out[i, j] = not above[i, j]
            if out[i, j]:
                count += 1
    return count


@njit(cache=True, nogil=True)
def _flood_minus(spins, below, out):
    """Minus spins of ``below`` 4-connected by minus spins to row x2 = 0."""
    n = spins.shape[0]
    stack_i = np.empty(n * n, dtype=np.int64)
    stack_j = np.empty(n * n, dtype=np.int64)
    top = 0
    count = 0
    for i in range(n):
        if spins[i, 0] < 0 and below[i, 0]:
            out[i, 0] = True
            stack_i[top] = i
            stack_j[top] = 0
            top += 1
            count += 1
    while top > 0:
        top -= 1
        i = stack_i[top]
        j = stack_j[top]
        for k in range(4):
            ii = i + _DA[k]
            jj = j + _DB[k]
            if 0 <= ii < n and 0 <= jj < n and not out[ii, jj] and spins[ii, jj] < 0 and below[ii, jj]:
                out[ii, jj] = True
                stack_i[top] = ii
                stack_j[top] = jj
                top += 1
                count += 1
    return count


@njit(cache=True, nogil=True)
def layer_measure(spins, ext, path_a, path_b, horiz, vert, below, cminus):
    """Contour length, |Lambda^-|, |C^-| for one configuration (scratch arrays reused).

    Returns (-1, -1, -1) if no valid open contour exists.
    """
    ext[:, :] = 1
    n = spins.shape[0]
    for i in range(n + 2):
        ext[i, 0] = -1
    for i in range(n):
        for j in range(n):
            ext[i + 1, j + 1] = spins[i, j]
    horiz[:, :] = False
    vert[:, :] = False
    below[:, :] = False
    cminus[:, :] = False
    length = _walk_open(ext, path_a, path_b, horiz, vert)
    if length < 0:
        return -1, -1, -1
    nl = _flood_below(horiz, vert, n, below)
    nc = _flood_minus(spins, below, cminus)
    return length, nl, nc


class LayerWorkspace:
    """Scratch buffers for repeated measurements on one box size."""

    def __init__(self, n: int):
        self.n = n
        self.ext = np.empty((n + 2, n + 2), dtype=np.int8)
        m = (n + 1) * (n + 1) * 2 + 4
        self.path_a = np.empty(m, dtype=np.int64)
        self.path_b = np.empty(m, dtype=np.int64)
        self.horiz = np.zeros((n + 1, n + 1), dtype=np.bool_)
        self.vert = np.zeros((n + 1, n + 1), dtype=np.bool_)
        self.below = np.zeros((n, n), dtype=np.bool_)
        self.cminus = np.zeros((n, n), dtype=np.bool_)

    def measure(self, spins: np.ndarray) -> tuple[int, int, int]:
        out = layer_measure(spins, self.ext, self.path_a, self.path_b, self.horiz, self.vert, self.below, self.cminus)
        if out[0] < 0:
            raise ContourError("no open contour between the wall endpoints")
        return int(out[0]), int(out[1]), int(out[2])


@dataclass(frozen=True)
class OpenContour:
    """Open contour as a sequence of dual vertices, in real half-integer coordinates.

    Runs from (-(N-1)/2, 1/2) to ((N+1)/2, 1/2).
    """

    n: int
    vertices: tuple[tuple[float, float], ...]
    horiz: np.ndarray
    vert: np.ndarray
    closed_loops: int
    closed_length: int

    @property
    def length(self) -> int:
        return len(self.vertices) - 1

    def edges(self):
        return list(zip(self.vertices[:-1], self.vertices[1:]))

    def dump(self) -> str:
        """One dual edge per line as doubled integer coordinates 2x1 2y1 2x2 2y2."""
        lines = []
        for (x1, y1), (x2, y2) in self.edges():
            lines.append(f"{round(2 * x1)} {round(2 * y1)} {round(2 * x2)} {round(2 * y2)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LayerSets:
    lambda_minus: np.ndarray  # bool mask over the (N, N) box
    c_minus: np.ndarray

    @property
    def size_lambda_minus(self) -> int:
        return int(self.lambda_minus.sum())

    @property
    def size_c_minus(self) -> int:
        return int(self.c_minus.sum())


def _as_spins(config) -> np.ndarray:
    if callable(config) and hasattr(config, "spins"):
        return np.asarray(config.spins, dtype=np.int8)
    if hasattr(config, "spins"):
        return np.asarray(config.spins, dtype=np.int8)
    return np.asarray(config, dtype=np.int8)


def pm_boundary_ok(spins: np.ndarray) -> bool:
    """Boundary layer equals sign(x2) with sign(0) = -1."""
    s = np.asarray(spins)
    return bool(
        np.all(s[:, 0] == -1) and np.all(s[0, 1:] == 1) and np.all(s[-1, 1:] == 1) and np.all(s[:, -1] == 1)
    )


def extract_open_contour(config, n: int | None = None) -> OpenContour:
    """Open contour of the extended configuration after splitting crossings."""
    spins = np.ascontiguousarray(_as_spins(config))
    n = spins.shape[0] if n is None else n
    if spins.shape != (n, n) or n % 2:
        raise ValueError("expected an even N x N spin array")
    if not pm_boundary_ok(spins):
        raise ContourError("the open contour needs the +- boundary layer")
    ext = extended_window(spins)
    m = (n + 1) * (n + 1) * 2 + 4
    pa = np.empty(m, dtype=np.int64)
    pb = np.empty(m, dtype=np.int64)
    horiz = np.zeros((n + 1, n + 1), dtype=np.bool_)
    vert = np.zeros((n + 1, n + 1), dtype=np.bool_)
    steps = _walk_open(ext, pa, pb, horiz, vert)
    if steps < 0:
        raise ContourError("parity failure: no open contour between the wall endpoints")
    h2, v2 = horiz.copy(), vert.copy()
    loops, loop_len = _closed_loops(ext, h2, v2)
    if loops < 0:
        raise ContourError("parity failure while tracing closed contours")
    half = n // 2
    verts = tuple((float(a) - half + 0.5, float(b) - 0.5) for a, b in zip(pa[: steps + 1], pb[: steps + 1]))
    horiz.setflags(write=False)
    vert.setflags(write=False)
    return OpenContour(n, verts, horiz, vert, int(loops), int(loop_len))


def layer_sets(contour: OpenContour, config, n: int | None = None) -> LayerSets:
    spins = np.ascontiguousarray(_as_spins(config))
    n = contour.n if n is None else n
    below = np.zeros((n, n), dtype=np.bool_)
    cm = np.zeros((n, n), dtype=np.bool_)
    _flood_below(contour.horiz, contour.vert, n, below)
    _flood_minus(spins, below, cm)
    return LayerSets(below, cm)


def disagreement_edge_count(config) -> int:
    """Disagreeing nearest-neighbour pairs of the extension whose dual edge has
    both endpoints among the window's dual vertices."""
    ext = extended_window(_as_spins(config))
    inner_h = ext[1:-1, :-1] != ext[1:-1, 1:]  # vertical pairs -> horizontal dual edges
    inner_v = ext[:-1, 1:-1] != ext[1:, 1:-1]  # horizontal pairs -> vertical dual edges
    return int(inner_h.sum() + inner_v.sum())
