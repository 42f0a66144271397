"""Exponential-Gaussian convolution, decay-model fits and scaling regressions.

The normalized convolution of ``exp(-Gamma |t| / 2)`` with
``exp(-sigma^2 t^2 / 2)`` has the closed form::

    C(t) = [e^{-Gt/2} erfc((G/2 - s^2 t)/(sqrt2 s)) + e^{Gt/2} erfc((G/2 + s^2 t)/(sqrt2 s))]
           / (2 erfc(G/(2 sqrt2 s)))

for ``t >= 0`` (even in ``t``). Growing exponentials are folded into
``erfcx`` so the expression never overflows.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.integrate import quad
from scipy.optimize import least_squares
from scipy.special import erfc, erfcx

from .errors import FitError, NotCrossedError, QuadratureError

KINDS = ("exponential", "gaussian", "convolution")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ConvolutionParams:
    gamma: float = 0.0
    sigma: float = 0.0
    e_r: float = 0.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class FitResult:
    kind: str
    params: ConvolutionParams
    rms_residual: float
    r_squared: float
    fit_window: tuple[float, float]
    n_points: int = 0

    def predict(self, t) -> np.ndarray:
        return model_curve(self.kind, self.params, t)

    def to_dict(self) -> dict:
        return {
            "model": self.kind,
            "params": asdict(self.params),
            "r2": self.r_squared,
            "residual": self.rms_residual,
            "fit_window": list(self.fit_window),
            "n_points": self.n_points,
        }


def convolution_value(gamma, sigma, t) -> np.ndarray:
    """Closed-form normalized convolution, vectorized over all arguments.

    Raises
    ------
    ValueError
        If ``sigma <= 0`` or ``gamma < 0``.
    """
    g = np.asarray(gamma, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0) or np.any(~np.isfinite(s)):
        raise ValueError("sigma must be positive")
    if np.any(g < 0):
        raise ValueError("gamma must be non-negative")
    t = np.abs(np.asarray(t, dtype=float))
    r2s = SQRT2 * s
    x0 = g / (2 * r2s)
    x1 = (g / 2 - s * s * t) / r2s
    x2 = (g / 2 + s * s * t) / r2s
    gauss = np.exp(-0.5 * (s * t) ** 2)
    norm = 2 * erfcx(x0)
    # e^{+Gt/2} erfc(x2) = erfcx(x2) e^{-s^2 t^2/2} e^{x0^2}; the e^{x0^2} cancels with norm
    grow = erfcx(x2) * gauss
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.where(
            x1 >= 0,
            erfcx(np.maximum(x1, 0.0)) * gauss,
            erfc(np.minimum(x1, 0.0)) * np.exp(np.minimum(-g * t / 2 + x0 * x0, 0.0)),
        )
    out = (decay + grow) / norm
    return out if out.ndim else float(out)


def convolution_numeric(gamma: float, sigma: float, t: float, rtol: float = 1e-12, limit: int = 200) -> float:
    """Adaptive quadrature of the defining convolution integral, normalized at ``t = 0``.

    The integrand is split at its kink (``tau = 0``), at the Gaussian centre
    (``tau = t``) and at the edges of the Gaussian core; the range is ``|t| + max(60/Gamma, 12/sigma)`` on each side.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return 1.0
    t = abs(float(t))

    def integral(tt):
        half = tt + max(60.0 / gamma, 12.0 / sigma)

        def f(tau):
            return math.exp(-0.5 * gamma * abs(tau) - 0.5 * (sigma * (tt - tau)) ** 2)

        total = 0.0
        # extra cuts bracket the Gaussian core so no panel can step over it
        core = 12.0 / sigma
        cuts = sorted({-half, 0.0, max(tt - core, -half), tt, min(tt + core, half), half})
        for a, b in zip(cuts[:-1], cuts[1:]):
            val, err, info = quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=limit, full_output=True)[:3]
            if err > max(10 * rtol * abs(val), 1e-300) and info.get("last", 0) >= limit:
                raise QuadratureError(f"quadrature tolerance not reached on [{a}, {b}] (err {err:.3g})")
            total += val
        return total

    return integral(t) / integral(0.0)


def exponential_model(t, gamma, amplitude=1.0):
    return amplitude * np.exp(-0.5 * gamma * np.asarray(t, dtype=float))


def gaussian_model(t, sigma, amplitude=1.0):
    t = np.asarray(t, dtype=float)
    return amplitude * np.exp(-0.5 * (sigma * t) ** 2)


def model_curve(kind: str, params: ConvolutionParams, t) -> np.ndarray:
    if kind == "exponential":
        return exponential_model(t, params.gamma, params.amplitude)
    if kind == "gaussian":
        return gaussian_model(t, params.sigma, params.amplitude)
    if kind == "convolution":
        return params.amplitude * convolution_value(params.gamma, params.sigma, t)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def default_window(times, values, floor: float = 1e-3) -> np.ndarray:
    """Boolean mask of the leading samples before ``|r|`` first drops to ``floor``."""
    v = np.abs(np.asarray(values))
    below = np.nonzero(v <= floor)[0]
    end = below[0] if below.size else v.size
    mask = np.zeros(v.size, bool)
    mask[:end] = True
    return mask


def _moment_scale(t, y):
    # area under the (normalized) curve sets the natural decay time
    area = np.trapezoid(y, t) / max(y[0], 1e-300)
    return max(area, (t[-1] - t[0]) / t.size, 1e-300)


def fit_model(
    times,
    values,
    kind: str,
    window=None,
    floor: float = 1e-3,
    fit_amplitude: bool | None = None,
    min_points: int = 20,
) -> FitResult:
    """Least-squares fit of ``|r(t)|`` to one decay model.

    Parameters
    ----------
    times, values
        Samples; complex values are reduced to their modulus.
    kind : {"exponential", "gaussian", "convolution"}
    window : (t_lo, t_hi) or boolean mask, optional
        Default: the leading samples with ``|r| > floor``.
    fit_amplitude : bool, optional
        Default fits an amplitude only when the data start after ``t = 0``.

    Raises
    ------
    FitError
        Too few points, or no start converged.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    t = np.asarray(times, dtype=float)
    y = np.abs(np.asarray(values))
    if window is None:
        mask = default_window(t, y, floor)
    elif isinstance(window, tuple):
        mask = (t >= window[0]) & (t <= window[1])
    else:
        mask = np.asarray(window, bool)
    t, y = t[mask], y[mask]
    if t.size < min_points:
        raise FitError(f"fit window holds {t.size} samples; need at least {min_points}")
    if fit_amplitude is None:
        fit_amplitude = t[0] > 0
    tau = _moment_scale(t, y)

    if kind == "exponential":
        starts = [[2.0 / tau * f] for f in (1.0, 0.3, 3.0)]
        lower = [0.0]

        def curve(p):
            return exponential_model(t, p[0])
    elif kind == "gaussian":
        starts = [[math.sqrt(math.pi / 2) / tau * f] for f in (1.0, 0.3, 3.0)]
        lower = [0.0]

        def curve(p):
            return gaussian_model(t, p[0])
    else:
        g0, s0 = 2.0 / tau, math.sqrt(math.pi / 2) / tau
        starts = [[g0 * f, s0 * (1.1 - f) + 1e-9 * s0] for f in (0.05, 0.5, 0.95)]
        starts += [[g0 * 5, s0 * 0.5], [g0 * 0.2, s0 * 3]]
        lower = [0.0, 1e-12 * s0]

        def curve(p):
            return convolution_value(p[0], p[1], t)

    if fit_amplitude:
        amp0 = max(y[0], 1e-12)
        starts = [[amp0, *s] for s in starts]
        lower = [0.0, *lower]

        def resid(p):
            return p[0] * curve(p[1:]) - y
    else:
        def resid(p):
            return curve(p) - y

    best = None
    for p0 in starts:
        try:
            res = least_squares(resid, p0, bounds=(lower, np.inf), x_scale="jac", max_nfev=2000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(res.fun)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None or best.status <= 0:
        raise FitError(f"{kind} fit failed from all starts", best=None if best is None else best.x)
    p = [float(v) for v in best.x]
    amp = p.pop(0) if fit_amplitude else 1.0
    if kind == "exponential":
        params = ConvolutionParams(gamma=p[0], amplitude=amp)
    elif kind == "gaussian":
        params = ConvolutionParams(sigma=p[0], amplitude=amp)
    else:
        params = ConvolutionParams(gamma=p[0], sigma=p[1], amplitude=amp)
    rr = best.fun
    ss_tot = np.sum((y - y.mean()) ** 2)
    return FitResult(
        kind=kind,
        params=params,
        rms_residual=float(np.sqrt(np.mean(rr**2))),
        r_squared=float(1 - np.sum(rr**2) / ss_tot) if ss_tot > 0 else 1.0,
        fit_window=(float(t[0]), float(t[-1])),
        n_points=int(t.size),
    )


def fit_all(times, values, **kwargs) -> dict[str, FitResult]:
    return {kind: fit_model(times, values, kind, **kwargs) for kind in KINDS}


def decoherence_time(times, values, threshold: float = math.exp(-1)) -> float:
    """First time ``|r|`` reaches ``threshold``, by linear interpolation.

    Raises
    ------
    NotCrossedError
        If the trace stays above ``threshold``.
    """
    t = np.asarray(times, dtype=float)
    y = np.abs(np.asarray(values))
    hit = np.nonzero(y <= threshold)[0]
    if hit.size == 0:
        raise NotCrossedError(f"trace never falls to {threshold:.4g} (min {y.min():.4g} at t={t[-1]:.4g})")
    i = hit[0]
    if i == 0:
        return float(t[0])
    y0, y1 = y[i - 1], y[i]
    return float(t[i - 1] + (y0 - threshold) * (t[i] - t[i - 1]) / (y0 - y1))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float


def scaling_exponent(couplings, taus) -> ScalingFit:
    """Least-squares line through ``(log coupling, log tau)``."""
    x = np.asarray(couplings, dtype=float)
    y = np.asarray(taus, dtype=float)
    if x.shape != y.shape or x.size < 4:
        raise ValueError("need at least 4 (coupling, tau) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("couplings and times must be positive")
    lr = stats.linregress(np.log(x), np.log(y))
    return ScalingFit(float(lr.slope), float(lr.intercept), float(lr.rvalue**2))
