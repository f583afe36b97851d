"""Weighted least-squares exponent fits on declared transformed axes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_FIT_SEED = 20_231_117
N_BOOTSTRAP = 1000

_TRANSFORMS = {
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "log": (np.log, lambda x: 1.0 / x),
    "abslog": (lambda x: np.abs(np.log(x)), lambda x: 1.0 / x),
    "log_abslog": (lambda x: np.log(np.abs(np.log(x))), lambda x: 1.0 / (x * np.abs(np.log(x)))),
    "sqrt_abslog": (lambda x: np.sqrt(np.abs(np.log(x))), lambda x: 0.5 / (x * np.sqrt(np.abs(np.log(x))))),
}
# fitted forms: y = a * |log x|^nu -> axes ("log_abslog", "log"); y = c * x^s -> ("log", "log")
AXES = tuple(_TRANSFORMS)


class FitError(ValueError):
    """Raised for a degenerate design or malformed input."""


@dataclass(frozen=True)
class FitResult:
    exponent: float
    amplitude: float
    ci_low: float
    ci_high: float
    axes: tuple[str, str]
    residuals: np.ndarray = field(repr=False)
    chi2_per_dof: float | None = None
    r_squared: float = 1.0
    n_points: int = 0
    n_bootstrap: int = 0

    @property
    def ci_halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "ci68": [self.ci_low, self.ci_high],
            "axes": list(self.axes),
            "chi2_per_dof": self.chi2_per_dof,
            "r_squared": self.r_squared,
            "max_abs_residual": float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0,
            "n_points": self.n_points,
        }


def _wls(x, y, w):
    sw = np.sqrt(w)
    design = np.column_stack([x, np.ones_like(x)]) * sw[:, None]
    coef, *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    return coef[0], coef[1]


def fit_exponent(
    xs,
    ys,
    errors=None,
    axes: tuple[str, str] = ("log", "log"),
    *,
    seed: int = DEFAULT_FIT_SEED,
    n_bootstrap: int = N_BOOTSTRAP,
) -> FitResult:
    """Fit ``T_y(y) = slope * T_x(x) + intercept``.

    ``errors`` are standard errors of ``ys`` in the original scale and set the
    weights; they are propagated through the y-transform to first order. The
    68% interval comes from a parametric bootstrap when errors are given and
    from case resampling otherwise. Points are put in a canonical order first,
    so permuting the input does not change the result.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise FitError("xs and ys must be 1-d arrays of equal length")
    if xs.size < 4:
        raise FitError("need at least 4 points")
    if axes[0] not in _TRANSFORMS or axes[1] not in _TRANSFORMS:
        raise FitError(f"axes must be taken from {AXES}")
    errs = None if errors is None else np.asarray(errors, dtype=float)
    if errs is not None and (errs.shape != xs.shape or np.any(errs < 0)):
        raise FitError("errors must be nonnegative and match xs")

    order = np.lexsort((ys, xs)) if errs is None else np.lexsort((errs, ys, xs))
    xs, ys = xs[order], ys[order]
    if errs is not None:
        errs = errs[order]

    tx, _ = _TRANSFORMS[axes[0]]
    ty, dty = _TRANSFORMS[axes[1]]
    with np.errstate(all="raise"):
        try:
            X = tx(xs)
            Y = ty(ys)
        except FloatingPointError as exc:
            raise FitError(f"data outside the domain of the declared axes: {exc}") from exc
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise FitError("transformed data not finite")
    if np.ptp(X) == 0:
        raise FitError("singular design: all transformed x values are equal")

    if errs is not None and np.all(errs > 0):
        sy = errs * np.abs(dty(ys))
        w = 1.0 / sy**2
    else:
        sy = None
        w = np.ones_like(X)
    slope, intercept = _wls(X, Y, w)
    resid = Y - (slope * X + intercept)
    ss_tot = float(np.sum(w * (Y - np.average(Y, weights=w)) ** 2))
    ss_res = float(np.sum(w * resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    chi2 = ss_res / (X.size - 2) if sy is not None else None

    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_bootstrap):
        if sy is not None:
            yb = ys + rng.standard_normal(ys.size) * errs
            if np.any(yb <= 0) and axes[1] != "identity":
                yb = np.where(yb > 0, yb, ys)
            bs, _ = _wls(X, ty(yb), w)
        else:
            idx = rng.integers(0, X.size, X.size)
            if np.ptp(X[idx]) == 0:
                continue
            bs, _ = _wls(X[idx], Y[idx], w[idx])
        boots.append(bs)
    if boots:
        lo, hi = np.percentile(boots, [16.0, 84.0])
    else:
        lo = hi = slope
    lo, hi = min(lo, slope), max(hi, slope)
    amplitude = float(np.exp(intercept)) if axes[1] == "log" else float(intercept)
    return FitResult(
        exponent=float(slope),
        amplitude=amplitude,
        ci_low=float(lo),
        ci_high=float(hi),
        axes=tuple(axes),
        residuals=resid,
        chi2_per_dof=chi2,
        r_squared=float(r2),
        n_points=int(X.size),
        n_bootstrap=len(boots),
    )
