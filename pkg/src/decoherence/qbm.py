"""Quantum Brownian motion of a unit-mass oscillator in an Ohmic bath.

The bath enters through the spectral density
``I(w) = (2 g0 / pi) w exp(-w^2 / L^2)`` and two kernels::

    mu(s)    =  int_0^inf I(w) coth(w / 2T) cos(w s) dw      (noise)
    eta_d(s) = -int_0^inf I(w) sin(w s) dw                    (dissipation)

The propagator coefficients follow from two solutions of the linear
integro-differential equation ``u'' + W0^2 u + 2 int_0^s eta_d(s - s') u(s') ds' = 0``
with boundary values ``u1(0) = u2(t) = 1`` and ``u1(t) = u2(0) = 0``.
The fringe visibility ``r_B`` of a two-packet superposition is a closed-form
expression in those coefficients.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.linalg import matmul_toeplitz
from scipy.optimize import least_squares
from scipy.signal import fftconvolve
from scipy.special import dawsn

from .errors import CoefficientDomainError, NotCrossedError, QuadratureError, SolverError
from .output import write_csv

SQRT_PI = math.sqrt(math.pi)
OMEGA_MAX_FACTOR = 6.0
# Kernel samples below this fraction of the peak are dropped from the memory sum.
KERNEL_TRUNCATION = 1e-16
BOUNDARY_TOL = 1e-8


@dataclass(frozen=True)
class QbmConfig:
    """Bath and initial-state parameters (mass 1, ``k_B = hbar = 1``)."""

    gamma0: float
    cutoff: float
    temperature: float
    omega0: float = 1.0
    x0: float = 10.0
    delta: float = 1.0

    def __post_init__(self):
        checks = {
            "gamma0": self.gamma0 >= 0,
            "cutoff": self.cutoff > 0,
            "temperature": self.temperature >= 0,
            "omega0": self.omega0 > 0,
            "x0": self.x0 > 0,
            "delta": self.delta > 0,
        }
        for name, ok in checks.items():
            value = getattr(self, name)
            if not (ok and math.isfinite(value)):
                raise ValueError(f"invalid {name}: {value!r}")

    def with_gamma0(self, gamma0: float) -> "QbmConfig":
        return replace(self, gamma0=float(gamma0))

    def default_step(self) -> float:
        """Grid spacing resolving both the cutoff and the bare period."""
        return min(1.0 / (20.0 * self.cutoff), 0.02 / self.omega0)


def spectral_density(omega, config: QbmConfig):
    w = np.asarray(omega, dtype=float)
    return (2 * config.gamma0 / math.pi) * w * np.exp(-((w / config.cutoff) ** 2))


def _coth_weight(temperature: float):
    """``w -> w coth(w / 2T)`` with its finite small-``w`` limit ``2T``."""
    if temperature == 0:
        return lambda w: w

    def f(w):
        x = w / (2 * temperature)
        return 2 * temperature if x < 1e-4 else w / math.tanh(x)

    return f


def _noise_integral(s, cutoff, temperature, omega_max, epsabs, epsrel, limit=500):
    """Noise kernel per unit ``gamma0``.

    The requested absolute tolerance is floored at ``1e-12`` times the kernel
    scale ``mu(0)``: the integrand is of that size, so double precision cannot
    resolve cancellations below it.
    """
    weight = _coth_weight(temperature)

    def f(w):
        return (2 / math.pi) * weight(w) * math.exp(-((w / cutoff) ** 2))

    scale = _noise_scale(cutoff, temperature, omega_max)
    epsabs = max(epsabs, 1e-12 * scale)
    if s == 0:
        return scale
    val, err, info = quad(
        f, 0.0, omega_max, weight="cos", wvar=abs(s), epsabs=epsabs, epsrel=epsrel,
        limit=limit, full_output=True,
    )[:3]
    if err > max(10 * epsabs, 10 * epsrel * abs(val)):
        raise QuadratureError(f"noise kernel quadrature failed at s={s} (err {err:.3g})")
    return val


@lru_cache(maxsize=64)
def _noise_scale(cutoff, temperature, omega_max):
    weight = _coth_weight(temperature)

    def f(w):
        return (2 / math.pi) * weight(w) * math.exp(-((w / cutoff) ** 2))

    val, err = quad(f, 0.0, omega_max, epsabs=0.0, epsrel=1e-13, limit=500)
    return val


def noise_kernel(s, config: QbmConfig, omega_max_factor: float = OMEGA_MAX_FACTOR,
                 epsabs: float = 1e-10, epsrel: float = 1e-10):
    """Noise kernel by adaptive quadrature over ``[0, omega_max_factor * cutoff]``."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    wmax = omega_max_factor * config.cutoff
    unit_abs = epsabs / config.gamma0 if config.gamma0 > 0 else epsabs
    out = np.array([
        config.gamma0 * _noise_integral(x, config.cutoff, config.temperature, wmax, unit_abs, epsrel)
        for x in s_arr.ravel()
    ]).reshape(s_arr.shape)
    return out if np.ndim(s) else float(out[0])


def noise_kernel_zero_temperature(s, config: QbmConfig):
    """Closed form at ``T = 0``: ``(g0 L^2 / pi) (1 - L s D(L s / 2))`` with Dawson's ``D``."""
    x = config.cutoff * np.abs(np.asarray(s, dtype=float))
    return (config.gamma0 * config.cutoff**2 / math.pi) * (1 - x * dawsn(x / 2))


def dissipation_kernel(s, config: QbmConfig):
    """Closed form ``-(g0 L^3 s / (2 sqrt(pi))) exp(-L^2 s^2 / 4)``."""
    s = np.asarray(s, dtype=float)
    lam = config.cutoff
    return -(config.gamma0 * lam**3 * s / (2 * SQRT_PI)) * np.exp(-((lam * s) ** 2) / 4)


def dissipation_kernel_quad(s, config: QbmConfig, omega_max_factor: float = 12.0):
    """Dissipation kernel from its defining sine integral (slow oracle)."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    wmax = omega_max_factor * config.cutoff
    lam = config.cutoff

    def f(w):
        return (2 / math.pi) * w * math.exp(-((w / lam) ** 2))

    vals = []
    for x in s_arr.ravel():
        if x == 0:
            vals.append(0.0)
            continue
        v = quad(f, 0.0, wmax, weight="sin", wvar=abs(x), epsabs=0.0, epsrel=1e-12, limit=500)[0]
        vals.append(-math.copysign(v, x))
    out = config.gamma0 * np.array(vals).reshape(s_arr.shape)
    return out if np.ndim(s) else float(out[0])


@dataclass(frozen=True, eq=False)
class KernelTable:
    s_grid: np.ndarray
    mu: np.ndarray
    eta_d: np.ndarray

    @property
    def step(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0]) if self.s_grid.size > 1 else 0.0


_MU_CACHE: dict = {}


def _unit_noise_table(cutoff: float, temperature: float, step: float, n: int,
                      omega_max_factor: float = OMEGA_MAX_FACTOR) -> np.ndarray:
    """Noise kernel per unit ``gamma0`` at ``k * step``, ``k = 0..n-1`` (cached)."""
    key = (cutoff, temperature, step, omega_max_factor)
    cached = _MU_CACHE.get(key)
    if cached is not None and cached.size >= n:
        return cached[:n]
    s = np.arange(n) * step
    if temperature == 0:
        table = noise_kernel_zero_temperature(s, QbmConfig(1.0, cutoff, 0.0))
    else:
        table = np.zeros(n)
        wmax = omega_max_factor * cutoff
        peak = None
        block = 64
        for lo in range(0, n, block):
            hi = min(n, lo + block)
            table[lo:hi] = [_noise_integral(x, cutoff, temperature, wmax, 1e-10, 1e-10) for x in s[lo:hi]]
            peak = abs(table[0]) if peak is None else peak
            # the high-temperature kernel is Gaussian in s; stop once it is gone
            if s[hi - 1] * cutoff > 12 and np.max(np.abs(table[lo:hi])) < 1e-14 * peak:
                table[hi:] = 0.0
                break
    _MU_CACHE[key] = table
    return table


def kernel_table(config: QbmConfig, step: float, n: int) -> KernelTable:
    """Kernels sampled at ``k * step`` for ``k = 0..n-1``."""
    s = np.arange(n) * step
    mu = config.gamma0 * _unit_noise_table(config.cutoff, config.temperature, step, n)
    return KernelTable(s, mu, dissipation_kernel(s, config))


def clear_kernel_cache() -> None:
    _MU_CACHE.clear()


def integrate_ivp(config: QbmConfig, step: float, n_steps: int, u0, du0):
    """Integrate the integro-differential equation for several initial conditions.

    Classical RK4 in time; the memory term is a trapezoid sum on the same grid,
    truncated where the dissipation kernel is negligible.

    Returns
    -------
    u, du : ndarray, shape (n_steps + 1, k)
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    du0 = np.atleast_1d(np.asarray(du0, dtype=float))
    k = max(u0.size, du0.size)
    h = step
    j = np.arange(n_steps + 2)
    ker = dissipation_kernel(j * h, config)
    ker_half = dissipation_kernel((j + 0.5) * h, config)
    peak = np.max(np.abs(ker_half)) if config.gamma0 > 0 else 0.0
    if peak > 0:
        big = np.nonzero(np.abs(ker_half) > KERNEL_TRUNCATION * peak)[0]
        width = int(big[-1]) + 2
    else:
        width = 0
    u = np.zeros((n_steps + 1, k))
    v = np.zeros((n_steps + 1, k))
    u[0], v[0] = u0, du0
    w2 = config.omega0**2

    def memory(n, kern, extra_end):
        # 2 * trapezoid over s' in [0, s_n] of kern[n - j'] u_j'
        if width == 0:
            return np.zeros(k)
        lo = max(0, n - width)
        seg = u[lo:n + 1]
        kk = kern[n - lo::-1]
        val = h * (kk @ seg) - 0.5 * h * kern[0] * u[n]
        if lo == 0:
            val -= 0.5 * h * kern[n] * u[0]
        return 2 * (val + extra_end * u[n])

    for n in range(n_steps):
        f0 = memory(n, ker, 0.0)
        # half step adds [s_n, s_n + h/2] by trapezoid; the kernel vanishes at the far end
        fh = memory(n, ker_half, 0.25 * h * ker_half[0])
        # u[n + 1] is still zero here and meets the vanishing kernel at lag 0
        f1 = memory(n + 1, ker, 0.0)
        un, vn = u[n], v[n]
        k1u, k1v = vn, -w2 * un - f0
        k2u = vn + 0.5 * h * k1v
        k2v = -w2 * (un + 0.5 * h * k1u) - fh
        k3u = vn + 0.5 * h * k2v
        k3v = -w2 * (un + 0.5 * h * k2u) - fh
        k4u = vn + h * k3v
        k4v = -w2 * (un + h * k3u) - f1
        u[n + 1] = un + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v[n + 1] = vn + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return u, v


@dataclass(frozen=True, eq=False)
class BvpSolution:
    final_time: float
    grid: np.ndarray = field(repr=False)
    u1: np.ndarray = field(repr=False)
    u2: np.ndarray = field(repr=False)
    du1_0: float = 0.0
    du1_t: float = 0.0
    du2_0: float = 0.0
    du2_t: float = 0.0
    a11: float = 0.0
    a12: float = 0.0
    a22: float = 0.0
    boundary_residual: float = 0.0
    linearity_residual: float = 0.0

    @property
    def b1(self) -> float:
        return 0.5 * self.du2_t

    @property
    def b2(self) -> float:
        return 0.5 * self.du1_t

    @property
    def b3(self) -> float:
        return 0.5 * self.du2_0

    @property
    def b4(self) -> float:
        return 0.5 * self.du1_0


GREGORY = np.array([3 / 8, 7 / 6, 23 / 24])
_SHORT_RULES = {
    0: [],
    1: [0.0],
    2: [0.5, 0.5],
    3: [1 / 3, 4 / 3, 1 / 3],
    4: [3 / 8, 9 / 8, 9 / 8, 3 / 8],
    5: [1 / 3, 4 / 3, 2 / 3, 4 / 3, 1 / 3],
}


def quadrature_weights(n_points: int, step: float) -> np.ndarray:
    """End-corrected trapezoid (Gregory) weights, fourth order for ``n_points >= 6``.

    Shorter grids use Simpson-type rules (trapezoid for two points).
    """
    if n_points >= 6:
        w = np.full(n_points, step)
        w[:3] = step * GREGORY
        w[-3:] = step * GREGORY[::-1]
        return w
    return step * np.array(_SHORT_RULES[n_points], dtype=float)


def noise_quadratic_form(f, g, mu, step: float) -> float:
    """``int int f(s) g(s') mu(|s - s'|) ds ds'`` over ``[0, t]^2`` by a tensor-product rule."""
    w = quadrature_weights(f.size, step)
    return float((w * f) @ matmul_toeplitz(mu[: f.size], w * g))


def solve_bvp(config: QbmConfig, t: float, grid_size: int = 2000) -> BvpSolution:
    """Solve both boundary-value problems on ``[0, t]`` by linear shooting.

    Two trial slopes per solution fix the unknown initial derivative exactly
    (the boundary value is affine in it); a third shot verifies the result.

    Raises
    ------
    SolverError
        Boundary residual above ``1e-8`` (refine ``grid_size``) or a singular
        shooting system (free oscillator with ``sin(W0 t) = 0``).
    """
    if not t > 0:
        raise ValueError("final time must be positive")
    if grid_size < 200:
        raise ValueError("grid_size must be at least 200")
    if config.gamma0 == 0 and abs(math.sin(config.omega0 * t)) < 1e-6:
        raise SolverError(f"free-oscillator boundary problem is singular at t={t}")
    m = int(grid_size)
    h = t / m
    # trial shots: u1 with u(0)=1, u2 with u(0)=0; slopes 0 and 1 each
    u, v = integrate_ivp(config, h, m, [1, 1, 0, 0], [0, 1, 0, 1])
    end = u[-1]
    targets = (0.0, 1.0)
    slopes = []
    for i, target in enumerate(targets):
        y0, y1 = end[2 * i], end[2 * i + 1]
        if y1 == y0:
            raise SolverError("shooting system is singular")
        slopes.append((target - y0) / (y1 - y0))
    predicted = [
        (1 - slopes[0]) * end[0] + slopes[0] * end[1],
        (1 - slopes[1]) * end[2] + slopes[1] * end[3],
    ]
    uu, vv = integrate_ivp(config, h, m, [1, 0], slopes)
    residual = max(abs(uu[-1, 0] - targets[0]), abs(uu[-1, 1] - targets[1]))
    linearity = max(abs(uu[-1, 0] - predicted[0]), abs(uu[-1, 1] - predicted[1]))
    if not residual < BOUNDARY_TOL:
        raise SolverError(f"boundary residual {residual:.3g} exceeds {BOUNDARY_TOL} (refine the grid)")
    u1, u2 = uu[:, 0], uu[:, 1]
    mu = kernel_table(config, h, m + 1).mu
    return BvpSolution(
        final_time=float(t),
        grid=np.linspace(0.0, t, m + 1),
        u1=u1,
        u2=u2,
        du1_0=float(slopes[0]),
        du1_t=float(vv[-1, 0]),
        du2_0=float(slopes[1]),
        du2_t=float(vv[-1, 1]),
        a11=0.5 * noise_quadratic_form(u1, u1, mu, h),
        a12=noise_quadratic_form(u1, u2, mu, h),
        a22=0.5 * noise_quadratic_form(u2, u2, mu, h),
        boundary_residual=float(residual),
        linearity_residual=float(linearity),
    )


def rb_from_coefficients(a11, a12, a22, b2, b3, b4, x0, delta, literal: bool = False):
    """Visibility ``r_B`` and its auxiliary widths from propagator coefficients.

    ``literal=True`` uses the grouping ``(a22 + 1/(4 delta^2 + delta^2 b4^2)) / b3^2``
    for ``delta1^2`` instead of the dimensionally consistent default.

    Returns
    -------
    r_b, delta1sq, delta2sq, kappa_x, kappa_p, valid : arrays
    """
    a11, a12, a22, b2, b3, b4 = (np.asarray(x, dtype=float) for x in (a11, a12, a22, b2, b3, b4))
    d2 = delta * delta
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if literal:
            d1sq = (a22 + 1 / (4 * d2 + d2 * b4**2)) / b3**2
        else:
            d1sq = (a22 + 1 / (4 * d2) + d2 * b4**2) / b3**2
        q = a12 - 2 * d2 * b2 * b4
        d2sq = 0.25 / (a11 + d2 * b2**2 - (q / b3) ** 2 / (4 * d1sq))
        kx = x0 / (2 * d1sq * d2 * b3)
        kp = x0 * d2sq * q / (2 * d2 * d1sq * b3**2)
        r = np.exp(-(x0**2) / d2 + kp**2 / d2sq + d1sq * kx**2)
    valid = np.isfinite(r) & np.isfinite(d2sq) & (d2sq > 0) & (b3 != 0) & (d1sq > 0)
    return r, d1sq, d2sq, kx, kp, valid


def rb_from_solution(sol: BvpSolution, config: QbmConfig, literal: bool = False) -> float:
    r, _, _, _, _, valid = rb_from_coefficients(
        sol.a11, sol.a12, sol.a22, sol.b2, sol.b3, sol.b4, config.x0, config.delta, literal
    )
    if not valid:
        raise CoefficientDomainError(f"coefficients outside their domain at t={sol.final_time}")
    return float(r)


@dataclass(frozen=True, eq=False)
class QbmTrace:
    times: np.ndarray
    r_b: np.ndarray
    delta1sq: np.ndarray
    delta2sq: np.ndarray
    kappa_x: np.ndarray
    kappa_p: np.ndarray
    valid: np.ndarray
    config: QbmConfig
    step: float

    def accepted(self):
        """Times and values of the valid points."""
        return self.times[self.valid], self.r_b[self.valid]

    def to_csv(self, path) -> Path:
        return write_csv(
            path,
            ("time", "r_b", "delta1sq", "delta2sq", "kappa_x", "kappa_p", "valid"),
            (self.times, self.r_b, self.delta1sq, self.delta2sq, self.kappa_x, self.kappa_p, self.valid),
        )

    def metadata(self) -> dict:
        return {"config": asdict(self.config), "step": self.step, "n_valid": int(self.valid.sum())}


def _prefix_forms(f, g, mu, h):
    """``int int_{[0, s_k]^2} f g mu`` for every prefix ``k``.

    Uses the weights of :func:`quadrature_weights` on each prefix. Sums with
    start-corrected weights are accumulated once by FFT convolution; the three
    end-correction weights of prefix ``k`` are then added as low-rank terms.
    """
    n = f.size
    c = np.full(n, h)
    m = min(3, n)
    c[:m] = h * GREGORY[:m]
    rg = fftconvolve(c * g, mu[:n])[:n]
    rf = fftconvolve(c * f, mu[:n])[:n]
    # adding row/column k to the block [0, k-1]^2
    full = np.cumsum(c * f * rg + c * g * rf - c * c * f * g * mu[0])
    out = np.empty(n)
    k = np.arange(5, n)
    d = h * (GREGORY - 1)  # corrections at offsets j = 0, 1, 2 from the end
    total = full[5:].copy()
    for j in range(3):
        a = k - j
        rg_a = rg[a] + h * sum(g[a + i] * mu[i] for i in range(1, j + 1))
        rf_a = rf[a] + h * sum(f[a + i] * mu[i] for i in range(1, j + 1))
        total += d[j] * (f[a] * rg_a + g[a] * rf_a)
        for jj in range(3):
            total += d[j] * d[jj] * f[a] * g[k - jj] * mu[abs(j - jj)]
    out[5:] = total
    for kk in range(min(5, n)):
        w = quadrature_weights(kk + 1, h)
        idx = np.arange(kk + 1)
        out[kk] = (w * f[: kk + 1]) @ (mu[np.abs(idx[:, None] - idx[None, :])] @ (w * g[: kk + 1]))
    return out


def _grid_for_times(times, step):
    """Common step and integer indices so that every requested time is a grid point."""
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) < 0):
        raise ValueError("times must be a non-empty ascending array of non-negative values")
    diffs = np.diff(np.concatenate([[0.0], t]))
    uniform = t.size > 1 and np.allclose(diffs[1:], diffs[1], rtol=1e-9, atol=0) and (
        t[0] == 0 or math.isclose(t[0], diffs[1], rel_tol=1e-9)
    )
    if uniform:
        dt = diffs[1]
        sub = max(1, math.ceil(dt / step - 1e-9))
        h = dt / sub
        idx = np.rint(t / h).astype(int)
    else:
        h = step
        idx = np.rint(t / h).astype(int)
    return h, idx


def rb_trace(config: QbmConfig, times, grid_size: int | None = None, step: float | None = None,
             literal: bool = False) -> QbmTrace:
    """Visibility ``r_B`` at each requested time.

    All times share one integration grid: the fundamental solutions
    (``u(0)=1, u'(0)=0`` and ``u(0)=0, u'(0)=1``) on ``[0, max(times)]`` give
    every boundary-value solution by linear combination, and the noise
    integrals over ``[0, t]^2`` are accumulated for all prefixes at once.
    This equals :func:`solve_bvp` on the prefix grid up to rounding. Times are
    snapped to grid points; ``grid_size`` fixes the number of steps up to
    ``max(times)``, otherwise ``step`` (default ``config.default_step()``) is
    an upper bound on the spacing.
    """
    t_req = np.asarray(times, dtype=float)
    if grid_size is not None:
        h = float(t_req.max()) / int(grid_size)
        idx = np.rint(t_req / h).astype(int)
    else:
        h, idx = _grid_for_times(t_req, config.default_step() if step is None else step)
    n_steps = int(idx.max())
    if n_steps < 1:
        raise ValueError("times must extend beyond zero")
    u, v = integrate_ivp(config, h, n_steps, [1, 0], [0, 1])
    phi, psi = u[:, 0], u[:, 1]
    dphi, dpsi = v[:, 0], v[:, 1]
    mu = kernel_table(config, h, n_steps + 1).mu
    g_pp = _prefix_forms(phi, phi, mu, h)
    g_pq = _prefix_forms(phi, psi, mu, h)
    g_qq = _prefix_forms(psi, psi, mu, h)
    k = idx
    with np.errstate(divide="ignore", invalid="ignore"):
        c = phi[k] / psi[k]
        a22 = 0.5 * g_qq[k] / psi[k] ** 2
        a11 = 0.5 * (g_pp[k] - 2 * c * g_pq[k] + c * c * g_qq[k])
        a12 = (g_pq[k] - c * g_qq[k]) / psi[k]
        b3 = 0.5 / psi[k]
        b4 = -0.5 * c
        b2 = 0.5 * (dphi[k] - c * dpsi[k])
    r, d1, d2, kx, kp, valid = rb_from_coefficients(a11, a12, a22, b2, b3, b4, config.x0, config.delta, literal)
    if config.gamma0 == 0:
        valid &= np.abs(np.sin(config.omega0 * k * h)) >= 1e-6
    zero = k == 0
    r = np.where(zero, 1.0, r)
    valid = valid | zero
    nan = np.where(zero, np.nan, 1.0)
    return QbmTrace(k * h, r, d1 * nan, d2 * nan, kx * nan, kp * nan, valid, config, float(h))


def qbm_zero_temperature_trace(config: QbmConfig, times, grid_size: int | None = None,
                               step: float | None = None) -> QbmTrace:
    """:func:`rb_trace` with the bath at zero temperature (``coth`` factor = 1)."""
    if config.temperature != 0:
        config = replace(config, temperature=0.0)
    return rb_trace(config, times, grid_size=grid_size, step=step)


def adaptive_rb_trace(config: QbmConfig, floor: float = 1e-3, n_times: int = 300,
                      t_guess: float | None = None, step: float | None = None,
                      max_doublings: int = 16) -> QbmTrace:
    """Uniform trace on ``[0, t_floor]`` where ``r_B`` first reaches ``floor``.

    The horizon starts at ``t_guess`` (default ``20 / cutoff``) and doubles
    until the floor is crossed; the output grid is then laid over the crossing.

    Raises
    ------
    NotCrossedError
        Floor not reached after ``max_doublings`` extensions.
    """
    h0 = config.default_step() if step is None else step
    t_end = 20.0 / config.cutoff if t_guess is None else float(t_guess)
    for _ in range(max_doublings + 1):
        n = max(n_times, int(math.ceil(t_end / h0)))
        trace = rb_trace(config, np.linspace(0.0, t_end, n + 1), step=h0)
        ok = trace.valid & (trace.r_b <= floor)
        if ok.any():
            t_hit = trace.times[np.argmax(ok)]
            return rb_trace(config, np.linspace(0.0, t_hit, n_times), step=h0)
        t_end *= 2
    raise NotCrossedError(f"r_B stays above {floor} up to t={t_end / 2:.4g}")


def decoherence_time_sweep(config: QbmConfig, gamma0s, threshold: float = math.exp(-1),
                           n_times: int = 400, step: float | None = None) -> list[float]:
    """``tau_D`` (first ``r_B = threshold`` crossing) for each coupling."""
    from .convolution import decoherence_time

    out = []
    guess = None
    for g in gamma0s:
        cfg = config.with_gamma0(g)
        coarse = adaptive_rb_trace(cfg, floor=threshold, n_times=n_times, t_guess=guess, step=step)
        t_hit = coarse.times[-1]
        fine = rb_trace(cfg, np.linspace(0.0, 1.25 * t_hit, n_times), step=step)
        t, r = fine.accepted()
        out.append(decoherence_time(t, r, threshold))
        guess = 0.5 * t_hit
    return out


@dataclass(frozen=True)
class PowerLawFit:
    """``r ~ amplitude * t**exponent + offset``."""

    amplitude: float
    exponent: float
    offset: float
    rms_residual: float
    r_squared: float
    fit_window: tuple[float, float]

    def predict(self, t):
        return self.amplitude * np.asarray(t, dtype=float) ** self.exponent + self.offset


def fit_power_law(times, values, window: tuple[float, float] | None = None) -> PowerLawFit:
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    mask = t > 0
    if window is not None:
        mask &= (t >= window[0]) & (t <= window[1])
    t, y = t[mask], y[mask]
    if t.size < 5:
        raise ValueError("power-law fit needs at least 5 positive-time samples")

    def resid(p):
        return p[0] * t ** p[1] + p[2] - y

    starts = [[y[0] * t[0] ** 0.5, -0.5, 0.0], [y[0] * t[0] ** 0.5, -0.5, 0.5 * y[-1]],
              [y[0] * t[0], -1.0, 0.0], [y[0] * t[0] ** 0.3, -0.3, 0.5 * y[-1]]]
    best = min((least_squares(resid, p0, x_scale="jac") for p0 in starts), key=lambda r: r.cost)
    rr = best.fun
    ss = np.sum((y - y.mean()) ** 2)
    return PowerLawFit(
        float(best.x[0]), float(best.x[1]), float(best.x[2]),
        float(np.sqrt(np.mean(rr**2))), float(1 - np.sum(rr**2) / ss) if ss > 0 else 1.0,
        (float(t[0]), float(t[-1])),
    )
