"""Numba kernels for the gradient interface model.

Everything here works on flat arrays: ``heights`` (float64, 0.0 where pinned),
``pinned`` (bool) and a neighbor table ``nbr`` of shape (n_sites, 2d) with -1
marking exterior neighbors, which sit at height 0.
"""

import math

import numpy as np
from numba import njit

U_QUADRATIC = 0
U_PERTURBED = 1
V_LINEAR = 0
V_POWER = 1

KERNEL_HEAT_BATH = 0
KERNEL_METROPOLIS = 1

LOG2 = math.log(2.0)
SQRT_PI = math.sqrt(math.pi)
CUT_NATS = 40.0
GRID_FALLBACK_POINTS = 4096
MAX_REJECTION_TRIES = 100

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
GL_X = np.ascontiguousarray(_GL_X)
GL_W = np.ascontiguousarray(_GL_W)


@njit(cache=True, nogil=True)
def u_val(code, delta, x):
    if code == U_QUADRATIC:
        return 0.5 * x * x
    ax = abs(x)
    return 0.5 * x * x + delta * (ax + math.log1p(math.exp(-2.0 * ax)) - LOG2)


@njit(cache=True, nogil=True)
def u_d1(code, delta, x):
    if code == U_QUADRATIC:
        return x
    return x + delta * math.tanh(x)


@njit(cache=True, nogil=True)
def u_d2(code, delta, x):
    if code == U_QUADRATIC:
        return 1.0
    t = math.tanh(x)
    return 1.0 + delta * (1.0 - t * t)


@njit(cache=True, nogil=True)
def v_val(code, p, x):
    if code == V_LINEAR:
        return x
    if x <= 0.0:
        return 0.0
    return x**p


@njit(cache=True, nogil=True)
def v_d1(code, p, x):
    if code == V_LINEAR:
        return 1.0
    if x <= 0.0:
        return 1.0 if p == 1.0 else 0.0
    return p * x ** (p - 1.0)


@njit(cache=True, nogil=True)
def v_d2(code, p, x):
    if code == V_LINEAR or p == 1.0:
        return 0.0
    if x <= 0.0:
        return 0.0 if p >= 2.0 else 1e300
    return p * (p - 1.0) * x ** (p - 2.0)


@njit(cache=True, nogil=True)
def erfcx(z):
    """Scaled complementary error function exp(z^2) erfc(z)."""
    if z < 10.0:
        return math.exp(z * z) * math.erfc(z)
    iz2 = 1.0 / (2.0 * z * z)
    s = 1.0
    term = 1.0
    for n in range(1, 9):
        term *= -(2 * n - 1) * iz2
        s += term
    return s / (z * SQRT_PI)


# ---------------------------------------------------------------------------
# energies


@njit(cache=True, nogil=True)
def site_energy(x, nb, ucode, ud, vcode, vp, lam):
    """Energy terms that involve the value ``x`` at one site."""
    e = 0.0
    for k in range(nb.shape[0]):
        e += u_val(ucode, ud, x - nb[k])
    return e + lam * v_val(vcode, vp, x)


@njit(cache=True, nogil=True)
def gather_neighbors(heights, nbr, site, out):
    for k in range(nbr.shape[1]):
        j = nbr[site, k]
        out[k] = heights[j] if j >= 0 else 0.0


@njit(cache=True, nogil=True)
def total_energy(heights, nbr, ucode, ud, vcode, vp, lam):
    # Kahan summation; each interior edge once, exterior edges against 0
    s = 0.0
    c = 0.0
    n = heights.shape[0]
    for i in range(n):
        xi = heights[i]
        for k in range(nbr.shape[1]):
            j = nbr[i, k]
            if j < 0:
                t = u_val(ucode, ud, xi)
            elif j > i:
                t = u_val(ucode, ud, xi - heights[j])
            else:
                continue
            y = t - c
            tt = s + y
            c = (tt - s) - y
            s = tt
        t = lam * v_val(vcode, vp, xi)
        y = t - c
        tt = s + y
        c = (tt - s) - y
        s = tt
    return s


# ---------------------------------------------------------------------------
# single-site conditional law


@njit(cache=True, nogil=True)
def log_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell):
    lw = -site_energy(x, nb, ucode, ud, vcode, vp, lam)
    if mu > 0.0 and x > ell:
        lw -= mu * (x - ell) * (x - ell)
    return lw


@njit(cache=True, nogil=True)
def _dlog_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell):
    g = -lam * v_d1(vcode, vp, x)
    for k in range(nb.shape[0]):
        g -= u_d1(ucode, ud, x - nb[k])
    if mu > 0.0 and x > ell:
        g -= 2.0 * mu * (x - ell)
    return g


@njit(cache=True, nogil=True)
def _d2log_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell):
    h = -lam * v_d2(vcode, vp, x)
    for k in range(nb.shape[0]):
        h -= u_d2(ucode, ud, x - nb[k])
    if mu > 0.0 and x > ell:
        h -= 2.0 * mu
    return h


@njit(cache=True, nogil=True)
def find_mode(nb, ucode, ud, vcode, vp, lam, mu, ell):
    """Maximiser of the (concave) log-weight on [0, inf)."""
    if _dlog_weight(0.0, nb, ucode, ud, vcode, vp, lam, mu, ell) <= 0.0:
        return 0.0
    lo = 0.0
    hi = 1.0
    for k in range(nb.shape[0]):
        if nb[k] + 1.0 > hi:
            hi = nb[k] + 1.0
    while _dlog_weight(hi, nb, ucode, ud, vcode, vp, lam, mu, ell) > 0.0:
        lo = hi
        hi *= 2.0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        g = _dlog_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell)
        if g > 0.0:
            lo = x
        else:
            hi = x
        h = _d2log_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell)
        xn = x - g / h if h < 0.0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-13 * (1.0 + x) or hi - lo <= 1e-13 * (1.0 + hi):
            x = xn
            break
        x = xn
    return x


@njit(cache=True, nogil=True)
def integration_window(m, lmax, kappa, nb, ucode, ud, vcode, vp, lam, mu, ell):
    step = 1.0 / math.sqrt(kappa)
    b = m + step
    while log_weight(b, nb, ucode, ud, vcode, vp, lam, mu, ell) > lmax - CUT_NATS:
        step *= 2.0
        b = m + step
    a = 0.0
    if m > 0.0:
        step = 1.0 / math.sqrt(kappa)
        a = m - step
        while a > 0.0 and log_weight(a, nb, ucode, ud, vcode, vp, lam, mu, ell) > lmax - CUT_NATS:
            step *= 2.0
            a = m - step
        if a < 0.0:
            a = 0.0
    return a, b


@njit(cache=True, nogil=True)
def _gl_panels(a, b, panels, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell):
    h = (b - a) / panels
    s = 0.0
    for p in range(panels):
        mid = a + (p + 0.5) * h
        for q in range(GL_X.shape[0]):
            x = mid + 0.5 * h * GL_X[q]
            s += GL_W[q] * math.exp(log_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell) - lmax)
    return 0.5 * h * s


@njit(cache=True, nogil=True)
def continuous_mass(a, b, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell):
    """Integral of exp(log_weight - lmax) over [a, b], panel-doubling Gauss-Legendre."""
    panels = 4
    prev = _gl_panels(a, b, panels, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell)
    while panels < 1024:
        panels *= 2
        cur = _gl_panels(a, b, panels, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell)
        if abs(cur - prev) <= 1e-12 * abs(cur):
            return cur
        prev = cur
    return prev


@njit(cache=True, nogil=True)
def truncated_normal(mean, sd, rng):
    """Sample N(mean, sd^2) conditioned on [0, inf)."""
    alpha = -mean / sd
    if alpha < 0.5:
        while True:
            z = rng.standard_normal()
            if z >= alpha:
                return mean + sd * z
    lam_opt = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
    while True:
        z = alpha - math.log(1.0 - rng.random()) / lam_opt
        d = z - lam_opt
        if rng.random() <= math.exp(-0.5 * d * d):
            return mean + sd * z


@njit(cache=True, nogil=True)
def _grid_inverse_cdf(a, b, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell, rng):
    n = GRID_FALLBACK_POINTS
    xs = np.empty(n)
    cdf = np.empty(n)
    h = (b - a) / (n - 1)
    prev = 0.0
    acc = 0.0
    for k in range(n):
        xs[k] = a + k * h
        f = math.exp(log_weight(xs[k], nb, ucode, ud, vcode, vp, lam, mu, ell) - lmax)
        if k > 0:
            acc += 0.5 * h * (f + prev)
        cdf[k] = acc
        prev = f
    u = rng.random() * acc
    k = np.searchsorted(cdf, u)
    if k <= 0:
        return xs[0]
    if k >= n:
        return xs[n - 1]
    span = cdf[k] - cdf[k - 1]
    t = (u - cdf[k - 1]) / span if span > 0.0 else 0.5
    return xs[k - 1] + t * h


@njit(cache=True, nogil=True)
def pin_probability(nb, ucode, ud, vcode, vp, lam, ups, mu, ell):
    """Probability that the exact single-site conditional lands on the atom."""
    if ups <= 0.0:
        return 0.0
    k = nb.shape[0]
    if ucode == U_QUADRATIC and (vcode == V_LINEAR or lam == 0.0) and mu == 0.0:
        s = 0.0
        for q in range(k):
            s += nb[q]
        a = 0.5 * k
        m = (s - lam) / k
        ratio = 0.5 * math.sqrt(math.pi / a) * erfcx(-m * math.sqrt(a))
        return ups / (ups + ratio)
    m = find_mode(nb, ucode, ud, vcode, vp, lam, mu, ell)
    lmax = log_weight(m, nb, ucode, ud, vcode, vp, lam, mu, ell)
    lo, hi = integration_window(m, lmax, float(k), nb, ucode, ud, vcode, vp, lam, mu, ell)
    mass = continuous_mass(lo, hi, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell)
    atom = ups * math.exp(log_weight(0.0, nb, ucode, ud, vcode, vp, lam, mu, ell) - lmax)
    if not math.isfinite(mass):
        return math.nan
    return atom / (atom + mass)


@njit(cache=True, nogil=True)
def heat_bath_value(nb, ucode, ud, vcode, vp, lam, ups, mu, ell, rng):
    """Exact draw from the single-site conditional. Returns 0.0 for the atom
    together with ``True``; otherwise a positive height and ``False``."""
    k = nb.shape[0]
    if ucode == U_QUADRATIC and (vcode == V_LINEAR or lam == 0.0) and mu == 0.0:
        s = 0.0
        for q in range(k):
            s += nb[q]
        m = (s - lam) / k
        if ups > 0.0:
            a = 0.5 * k
            ratio = 0.5 * math.sqrt(math.pi / a) * erfcx(-m * math.sqrt(a))
            if rng.random() * (ups + ratio) < ups:
                return 0.0, True
        x = 0.0
        while x <= 0.0:
            x = truncated_normal(m, 1.0 / math.sqrt(k), rng)
        return x, False

    m = find_mode(nb, ucode, ud, vcode, vp, lam, mu, ell)
    lmax = log_weight(m, nb, ucode, ud, vcode, vp, lam, mu, ell)
    # U'' >= 1 for every built-in family, so the log-weight curvature is at least k
    kappa = float(k)
    lo, hi = integration_window(m, lmax, kappa, nb, ucode, ud, vcode, vp, lam, mu, ell)
    if ups > 0.0:
        mass = continuous_mass(lo, hi, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell)
        atom = ups * math.exp(log_weight(0.0, nb, ucode, ud, vcode, vp, lam, mu, ell) - lmax)
        if not math.isfinite(mass):
            raise FloatingPointError("non-finite conditional mass")
        if rng.random() * (atom + mass) < atom:
            return 0.0, True
    sd = 1.0 / math.sqrt(kappa)
    for _ in range(MAX_REJECTION_TRIES):
        x = truncated_normal(m, sd, rng)
        if x <= 0.0:
            continue
        d = x - m
        la = log_weight(x, nb, ucode, ud, vcode, vp, lam, mu, ell) - lmax + 0.5 * kappa * d * d
        if math.log(1.0 - rng.random()) <= la:
            return x, False
    x = 0.0
    while x <= 0.0:
        x = _grid_inverse_cdf(lo, hi, lmax, nb, ucode, ud, vcode, vp, lam, mu, ell, rng)
    return x, False


@njit(cache=True, nogil=True)
def metropolis_log_ratio(cur_pinned, x, new_pinned, y, nb, ucode, ud, vcode, vp, lam, ups, width, q_atom):
    """Log Metropolis-Hastings ratio for the reflected-Gaussian / atom proposal.

    Target and proposal densities are both taken with respect to the reference
    measure dx + ups * delta_0, so atom <-> continuum moves compare the atom mass
    against the proposal density at the continuous point.
    """
    if cur_pinned and new_pinned:
        return 0.0
    lw0 = log_weight(0.0, nb, ucode, ud, vcode, vp, lam, 0.0, 0.0)
    log_norm = -math.log(width * math.sqrt(2.0 * math.pi))
    if not cur_pinned and not new_pinned:
        return log_weight(y, nb, ucode, ud, vcode, vp, lam, 0.0, 0.0) - log_weight(
            x, nb, ucode, ud, vcode, vp, lam, 0.0, 0.0
        )
    if new_pinned:
        if ups <= 0.0:
            return -math.inf
        # reverse move proposes Free(x) from the atom: reflected density 2*phi(x)
        log_rev = math.log(1.0 - q_atom) + math.log(2.0) + log_norm - 0.5 * (x / width) ** 2
        return (
            math.log(ups)
            + lw0
            - log_weight(x, nb, ucode, ud, vcode, vp, lam, 0.0, 0.0)
            + log_rev
            - math.log(q_atom)
        )
    # atom -> Free(y)
    if ups <= 0.0:
        return math.inf
    log_fwd = math.log(1.0 - q_atom) + math.log(2.0) + log_norm - 0.5 * (y / width) ** 2
    log_rev = math.log(q_atom) if q_atom > 0.0 else -math.inf
    return log_weight(y, nb, ucode, ud, vcode, vp, lam, 0.0, 0.0) + log_rev - math.log(ups) - lw0 - log_fwd


@njit(cache=True, nogil=True)
def metropolis_value(cur_pinned, x, nb, ucode, ud, vcode, vp, lam, ups, width, q_atom, rng):
    if ups > 0.0 and rng.random() < q_atom:
        new_pinned = True
        y = 0.0
    else:
        new_pinned = False
        base = 0.0 if cur_pinned else x
        y = abs(base + width * rng.standard_normal())
        if y == 0.0:
            return x, cur_pinned
    lr = metropolis_log_ratio(cur_pinned, x, new_pinned, y, nb, ucode, ud, vcode, vp, lam, ups, width, q_atom)
    if lr >= 0.0 or math.log(1.0 - rng.random()) < lr:
        return y, new_pinned
    return x, cur_pinned


# ---------------------------------------------------------------------------
# sweeps and chain driver


@njit(cache=True, nogil=True)
def shuffle_inplace(order, rng):
    for i in range(order.shape[0] - 1, 0, -1):
        j = int(rng.random() * (i + 1))
        if j > i:
            j = i
        t = order[i]
        order[i] = order[j]
        order[j] = t


@njit(cache=True, nogil=True)
def sweep_once(heights, pinned, nbr, order, ucode, ud, vcode, vp, lam, ups, mu, ell, kernel, width, q_atom, rng):
    """One pass over ``order``; returns (energy change, number of site updates)."""
    nb = np.empty(nbr.shape[1])
    de = 0.0
    c = 0.0
    for t in range(order.shape[0]):
        i = order[t]
        gather_neighbors(heights, nbr, i, nb)
        old = heights[i]
        if kernel == KERNEL_HEAT_BATH:
            new, pin = heat_bath_value(nb, ucode, ud, vcode, vp, lam, ups, mu, ell, rng)
        else:
            new, pin = metropolis_value(pinned[i], old, nb, ucode, ud, vcode, vp, lam, ups, width, q_atom, rng)
        if new != old:
            d = site_energy(new, nb, ucode, ud, vcode, vp, lam) - site_energy(old, nb, ucode, ud, vcode, vp, lam)
            y = d - c
            s = de + y
            c = (s - de) - y
            de = s
        heights[i] = new
        pinned[i] = pin
    return de, order.shape[0]


@njit(cache=True, nogil=True)
def run_sweeps(
    heights,
    pinned,
    nbr,
    order,
    shuffle,
    ucode,
    ud,
    vcode,
    vp,
    lam,
    ups,
    mu,
    ell,
    kernel,
    width,
    q_atom,
    rng,
    n_sweeps,
    burn_in,
    thin,
    rec_sites,
    slab_ells,
    core_masks,
    energy,
    out_mean,
    out_pinned,
    out_energy,
    out_sites,
    out_slab,
    out_penalty,
    out_core,
):
    """Drive ``n_sweeps`` sweeps and record measurements after burn-in.

    Returns the running energy and the number of site updates performed.
    """
    n = heights.shape[0]
    m = 0
    updates = 0
    for t in range(1, n_sweeps + 1):
        if shuffle:
            shuffle_inplace(order, rng)
        de, k = sweep_once(heights, pinned, nbr, order, ucode, ud, vcode, vp, lam, ups, mu, ell, kernel, width, q_atom, rng)
        energy += de
        updates += k
        if t > burn_in and (t - burn_in) % thin == 0 and m < out_mean.shape[0]:
            s = 0.0
            npin = 0
            pen = 0.0
            for i in range(n):
                s += heights[i]
                if pinned[i]:
                    npin += 1
                if heights[i] > ell:
                    pen += (heights[i] - ell) ** 2
            out_mean[m] = s / n
            out_pinned[m] = npin / n
            out_energy[m] = energy
            out_penalty[m] = pen / n
            for r in range(rec_sites.shape[0]):
                out_sites[m, r] = heights[rec_sites[r]]
            for q in range(slab_ells.shape[0]):
                cnt = 0
                for i in range(n):
                    if heights[i] <= slab_ells[q]:
                        cnt += 1
                out_slab[m, q] = cnt / n
            for q in range(core_masks.shape[0]):
                cnt = 0
                tot = 0
                for i in range(n):
                    if core_masks[q, i]:
                        tot += 1
                        if pinned[i]:
                            cnt += 1
                out_core[m, q] = cnt / tot
            m += 1
    return energy, updates
