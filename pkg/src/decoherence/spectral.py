"""Eigen-analysis, density of states, overlap profiles and Lorentzian widths.

Notation: ``H_E`` has eigenpairs ``(E_n, |n>)`` and a perturbed operator
``H_E + lam*H_P`` has eigenpairs ``(E^k, |k>)``. The overlap weights are
``|<k|n>|^2``. For the spin bath the effective perturbation is ``H_P = 2 H_I``.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import least_squares

from .errors import DegenerateSpectrumError, ExpansionInvalidError, FitError, NumericalError
from .output import write_csv, write_json
from .spin_model import SpinBathModel

HERMITIAN_TOL = 1e-10


def fingerprint(matrix: np.ndarray) -> str:
    """Short content hash used to identify an operator in error messages."""
    arr = np.ascontiguousarray(matrix)
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Ascending eigenvalues with eigenvectors stored column-wise."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.eigenvalues.flags.writeable = False
        self.eigenvectors.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude component of every column made real and positive
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    phase = lead / np.abs(lead)
    return vecs / phase if np.iscomplexobj(vecs) else vecs * np.sign(lead)


def diagonalize(h: np.ndarray, check: bool = True) -> SpectralDecomposition:
    """Full eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    h : ndarray, shape (d, d)
        Real symmetric or complex Hermitian matrix.
    check : bool
        Reject input whose anti-Hermitian part exceeds ``1e-10`` (relative to
        ``max(1, max|h|)``).

    Raises
    ------
    ValueError
        Non-square or non-Hermitian input.
    NumericalError
        LAPACK failed to converge; the message carries an operator fingerprint.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if check:
        scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
        dev = float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0
        if dev > HERMITIAN_TOL * scale:
            raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3g})")
    try:
        vals, vecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigensolver did not converge for operator {fingerprint(h)}: {exc}"
        ) from exc
    return SpectralDecomposition(vals, _fix_phases(vecs))


@dataclass(frozen=True, eq=False)
class DensityOfStates:
    """Normalized eigenvalue histogram with exact sample moments.

    ``density`` integrates to one under the trapezoid rule on ``bin_centers``.
    """

    bin_centers: np.ndarray
    density: np.ndarray
    mean: float
    width: float
    n_states: int
    edges: np.ndarray = field(repr=False)
    skewness: float = 0.0
    excess_kurtosis: float = 0.0

    def gaussian(self, energy) -> np.ndarray:
        """Normalized Gaussian model with the sample mean and width."""
        z = (np.asarray(energy, dtype=float) - self.mean) / self.width
        return np.exp(-0.5 * z * z) / (self.width * math.sqrt(2 * math.pi))

    def states_per_energy(self, energy) -> np.ndarray:
        """Gaussian model scaled to the number of states (unnormalized DOS)."""
        return self.n_states * self.gaussian(energy)

    def to_csv(self, path):
        return write_csv(path, ("energy", "value"), (self.bin_centers, self.density))


def default_bin_count(n_states: int) -> int:
    return max(32, math.ceil(math.sqrt(n_states)))


def density_of_states(eigenvalues, bin_count: int | None = None) -> DensityOfStates:
    e = np.sort(np.asarray(eigenvalues, dtype=float).ravel())
    if e.size < 2 or e[0] == e[-1]:
        raise DegenerateSpectrumError("density of states needs at least two distinct eigenvalues")
    bins = default_bin_count(e.size) if bin_count is None else int(bin_count)
    if bins < 8:
        raise ValueError(f"bin_count must be >= 8, got {bins}")
    counts, edges = np.histogram(e, bins=bins, range=(e[0], e[-1]))
    centers = 0.5 * (edges[1:] + edges[:-1])
    density = counts / np.trapezoid(counts, centers)
    return DensityOfStates(
        bin_centers=centers,
        density=density,
        mean=float(np.mean(e)),
        width=float(np.std(e)),
        n_states=int(e.size),
        edges=edges,
        skewness=float(stats.skew(e)),
        excess_kurtosis=float(stats.kurtosis(e)),
    )


@dataclass(frozen=True, eq=False)
class OverlapProfile:
    reference_index: int
    reference_energy: float
    energies: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    smoothed_energy: np.ndarray = field(repr=False)
    smoothed_weight: np.ndarray = field(repr=False)
    ldos: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)

    @property
    def smoothed(self) -> np.ndarray:
        """``(energy, mean weight)`` pairs, one row per non-empty bin."""
        return np.column_stack([self.smoothed_energy, self.smoothed_weight])

    def to_csv(self, path):
        return write_csv(path, ("energy", "value"), (self.smoothed_energy, self.smoothed_weight))

    def ldos_to_csv(self, path):
        centers = 0.5 * (self.edges[1:] + self.edges[:-1])
        return write_csv(path, ("energy", "value"), (centers, self.ldos))

    def weights_to_csv(self, path):
        return write_csv(path, ("energy", "value"), (self.energies, self.weights))


def overlap_profile(
    unperturbed: SpectralDecomposition,
    reference_index: int,
    perturbed: SpectralDecomposition,
    bin_count: int | None = None,
) -> OverlapProfile:
    """Weights ``|<k|n>|^2`` of unperturbed state ``n`` on the perturbed eigenbasis.

    The smoothed curve is the mean weight per fixed-width energy bin over the
    perturbed spectrum (empty bins dropped); ``ldos`` is the summed weight per
    bin divided by the bin width.
    """
    if unperturbed.dim != perturbed.dim:
        raise ValueError(f"dimension mismatch: {unperturbed.dim} vs {perturbed.dim}")
    n = int(reference_index)
    if not 0 <= n < unperturbed.dim:
        raise IndexError(f"reference_index {n} out of range")
    ref = unperturbed.eigenvectors[:, n]
    amp = perturbed.eigenvectors.conj().T @ ref
    weights = (amp * amp.conj()).real
    energies = perturbed.eigenvalues
    bins = default_bin_count(energies.size) if bin_count is None else int(bin_count)
    lo, hi = energies[0], energies[-1]
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, energies, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    sums = np.bincount(which, weights=weights, minlength=bins)
    occupied = counts > 0
    centers = 0.5 * (edges[1:] + edges[:-1])
    return OverlapProfile(
        reference_index=n,
        reference_energy=float(unperturbed.eigenvalues[n]),
        energies=energies,
        weights=weights,
        smoothed_energy=centers[occupied],
        smoothed_weight=sums[occupied] / counts[occupied],
        ldos=sums / np.diff(edges),
        edges=edges,
    )


def averaged_local_density(
    unperturbed: SpectralDecomposition,
    references,
    perturbed: SpectralDecomposition,
    edges,
) -> tuple[np.ndarray, np.ndarray]:
    """Local density of states averaged over several reference states.

    Each weight ``|<k|n>|^2`` is placed at the offset ``E_k - E_n`` from its
    own reference energy, so neighbouring states add up to one smooth peak
    even when a single profile holds only a few levels per width.

    Returns
    -------
    centers, density : ndarray
        Bin centres of ``edges`` and the mean weight per unit energy.
    """
    if unperturbed.dim != perturbed.dim:
        raise ValueError(f"dimension mismatch: {unperturbed.dim} vs {perturbed.dim}")
    refs = np.atleast_1d(np.asarray(references, dtype=int))
    edges = np.asarray(edges, dtype=float)
    amp = perturbed.eigenvectors.conj().T @ unperturbed.eigenvectors[:, refs]
    weights = (amp * amp.conj()).real
    offsets = perturbed.eigenvalues[:, None] - unperturbed.eigenvalues[refs][None, :]
    sums = np.histogram(offsets.ravel(), edges, weights=weights.ravel())[0]
    return 0.5 * (edges[1:] + edges[:-1]), sums / refs.size / np.diff(edges)


def middle_index(dim: int) -> int:
    """Reference eigenindex for "middle of the spectrum"."""
    return dim // 2


def perturbation_in_basis(model: SpinBathModel, decomposition: SpectralDecomposition) -> np.ndarray:
    """``2 H_I`` written in the eigenbasis of ``H_E``."""
    v = decomposition.eigenvectors
    return 2.0 * (v.conj().T @ (model.h_int_diag[:, None] * v))


def mean_offdiagonal_square(
    matrix: np.ndarray,
    energies: np.ndarray | None = None,
    reference=None,
    window: float | None = None,
) -> float:
    """Mean of ``|M_mn|^2`` over ``m != n``.

    With ``window`` the average is restricted to the row(s) of ``reference``
    (an index or a sequence of indices) and to states with
    ``|E_m - E_ref| < window``: the on-shell elements that set a decay rate.
    """
    m = np.asarray(matrix)
    d = m.shape[0]
    if d < 2:
        raise ValueError("need at least a 2x2 matrix")
    if window is None:
        sq = np.abs(m) ** 2
        return float((sq.sum() - np.trace(sq)) / (d * (d - 1)))
    if energies is None or reference is None:
        raise ValueError("a window needs energies and a reference index")
    e = np.asarray(energies)
    refs = np.atleast_1d(np.asarray(reference, dtype=int))
    sel = np.abs(e[None, :] - e[refs][:, None]) < window
    sel[np.arange(refs.size), refs] = False
    if not sel.any():
        raise ValueError(f"window {window} excludes all off-diagonal pairs")
    return float(np.mean(np.abs(m[refs][sel]) ** 2))


def measure_v_squared(
    model: SpinBathModel,
    lam: float,
    window: float | None = None,
    reference_index=None,
    decomposition: SpectralDecomposition | None = None,
) -> float:
    """Mean squared off-diagonal element of ``lam * 2 H_I`` in the ``H_E`` eigenbasis.

    ``window`` and ``reference_index`` restrict the mean to on-shell elements,
    see :func:`mean_offdiagonal_square`.
    """
    dec = diagonalize(model.h_env, check=False) if decomposition is None else decomposition
    ref = middle_index(dec.dim) if reference_index is None else reference_index
    p = perturbation_in_basis(model, dec)
    return lam**2 * mean_offdiagonal_square(p, dec.eigenvalues, ref, window)


def golden_rule_gamma(v_squared: float, eta_at_en: float) -> float:
    """Decay rate ``2 pi V^2 eta(E_n)`` with ``eta`` in states per unit energy."""
    if v_squared < 0 or eta_at_en < 0:
        raise ValueError("golden rule inputs must be non-negative")
    return 2.0 * math.pi * v_squared * eta_at_en


@dataclass(frozen=True)
class EffectiveWidth:
    gamma_eff: float
    e_shift: float
    fallback: bool = False


def effective_width_from_derivatives(v_squared, eta, d_eta2, dd_eta2) -> EffectiveWidth:
    """Second-order corrected width and shift from ``eta`` and derivatives of ``eta^2``.

    Raises
    ------
    ExpansionInvalidError
        If ``2 + pi^2 V^4 (eta^2)''`` or the squared half-width is non-positive.
    """
    pv4 = math.pi**2 * v_squared**2
    denom = 2.0 + pv4 * dd_eta2
    if denom <= 0:
        raise ExpansionInvalidError(f"width expansion invalid: denominator {denom:.3g} <= 0")
    e_r = pv4 * d_eta2 / denom
    half_sq = 2.0 * pv4 * eta**2 / denom - e_r**2
    if half_sq <= 0:
        raise ExpansionInvalidError(f"width expansion invalid: squared half-width {half_sq:.3g} <= 0")
    return EffectiveWidth(2.0 * math.sqrt(half_sq), e_r)


def gaussian_eta_derivatives(e_n, mean, width, n_states=1.0):
    """``eta``, ``(eta^2)'`` and ``(eta^2)''`` of a Gaussian DOS at ``e_n``."""
    eta = n_states * math.exp(-0.5 * ((e_n - mean) / width) ** 2) / (width * math.sqrt(2 * math.pi))
    x = e_n - mean
    s2 = width * width
    eta2 = eta * eta
    return eta, -2.0 * x / s2 * eta2, (4.0 * x * x / s2**2 - 2.0 / s2) * eta2


def effective_width(v_squared: float, dos, e_n: float) -> EffectiveWidth:
    """Width ``Gamma_eff`` and shift ``E_r`` for a Gaussian DOS model.

    ``dos`` is either a :class:`DensityOfStates` (its unnormalized Gaussian
    model is used) or a ``(mean, width, n_states)`` tuple.
    """
    if isinstance(dos, DensityOfStates):
        mean, width, count = dos.mean, dos.width, dos.n_states
    else:
        mean, width, count = dos
    return effective_width_from_derivatives(v_squared, *gaussian_eta_derivatives(e_n, mean, width, count))


def effective_width_or_golden_rule(v_squared: float, dos, e_n: float) -> EffectiveWidth:
    """:func:`effective_width`, falling back to the golden rule outside its validity."""
    try:
        return effective_width(v_squared, dos, e_n)
    except ExpansionInvalidError as exc:
        warnings.warn(f"{exc}; using golden-rule width", RuntimeWarning, stacklevel=2)
        if isinstance(dos, DensityOfStates):
            eta = float(dos.states_per_energy(e_n))
        else:
            mean, width, count = dos
            eta = gaussian_eta_derivatives(e_n, mean, width, count)[0]
        return EffectiveWidth(golden_rule_gamma(v_squared, eta), 0.0, fallback=True)


@dataclass(frozen=True)
class LorentzianFit:
    v_squared: float
    gamma_eff: float
    e_shift: float
    peak: float
    residual: float
    r_squared: float
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "model": "lorentzian",
            "params": {
                "v_squared": self.v_squared,
                "gamma_eff": self.gamma_eff,
                "e_shift": self.e_shift,
                "peak": self.peak,
            },
            "r2": self.r_squared,
            "residual": self.residual,
        }

    def to_json(self, path):
        return write_json(path, self.to_dict())


def lorentzian(energy, amplitude, peak, gamma):
    return amplitude / ((np.asarray(energy) - peak) ** 2 + 0.25 * gamma * gamma)


def _half_max_width(e, f, i):
    half = 0.5 * f[i]
    left = i
    while left > 0 and f[left] > half:
        left -= 1
    right = i
    while right < e.size - 1 and f[right] > half:
        right += 1
    return max(e[right] - e[left], 2 * np.min(np.diff(e)))


def fit_lorentzian_curve(
    energy,
    values,
    reference_energy: float | None = None,
    central_widths: float = 3.0,
) -> LorentzianFit:
    """Least-squares fit of ``A / ((E - E_peak)^2 + (Gamma/2)^2)``.

    A first fit over all points seeds a refit restricted to
    ``|E - E_peak| < central_widths * Gamma``; ``r_squared`` and ``residual``
    refer to that central region. ``e_shift = reference_energy - E_peak``.
    """
    e = np.asarray(energy, dtype=float)
    f = np.asarray(values, dtype=float)
    keep = f > 0
    if np.count_nonzero(keep) < 10:
        raise FitError(f"need at least 10 points with nonzero weight, got {np.count_nonzero(keep)}")
    order = np.argsort(e)
    e, f = e[order], f[order]
    i = int(np.argmax(f))
    g0 = _half_max_width(e, f, i)
    scale = f[i]

    def solve(mask, p0):
        ee, ff = e[mask], f[mask] / scale

        def resid(p):
            return p[0] / ((ee - p[1]) ** 2 + 0.25 * p[2] ** 2) - ff

        return least_squares(
            resid, p0, bounds=([0, -np.inf, 0], np.inf), x_scale="jac",
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000,
        )

    p0 = np.array([0.25 * g0 * g0, e[i], g0])
    res = solve(np.ones(e.size, bool), p0)
    if not res.success and res.status <= 0:
        raise FitError(f"Lorentzian fit did not converge: {res.message}", best=res.x)
    mask = np.abs(e - res.x[1]) < central_widths * res.x[2]
    if np.count_nonzero(mask) >= 4:
        res = solve(mask, res.x)
    else:
        mask = np.ones(e.size, bool)
    amp, peak, gamma = res.x
    if not (gamma > 0 and np.all(np.isfinite(res.x))):
        raise FitError("Lorentzian fit produced a non-positive width", best=res.x)
    fc = f[mask]
    rr = res.fun * scale
    ss_tot = np.sum((fc - fc.mean()) ** 2)
    ref = peak if reference_energy is None else reference_energy
    return LorentzianFit(
        v_squared=float(amp * scale),
        gamma_eff=float(gamma),
        e_shift=float(ref - peak),
        peak=float(peak),
        residual=float(np.sqrt(np.mean(rr**2))),
        r_squared=float(1 - np.sum(rr**2) / ss_tot) if ss_tot > 0 else 1.0,
        n_points=int(np.count_nonzero(mask)),
    )


def fit_lorentzian(profile: OverlapProfile, central_widths: float = 3.0) -> LorentzianFit:
    """Fit the smoothed overlap of ``profile``."""
    return fit_lorentzian_curve(
        profile.smoothed_energy, profile.smoothed_weight, profile.reference_energy, central_widths
    )


@dataclass(frozen=True)
class TailFit:
    """Semi-log line ``log F = c - |E - E_peak| / scale`` beyond the core."""

    decay_scale: float
    intercept: float
    r_squared_exponential: float
    r_squared_power: float


def tail_diagnostic(profile: OverlapProfile, fit: LorentzianFit, start_widths: float = 5.0) -> TailFit | None:
    """Compare exponential and ``1/E^2`` descriptions of the overlap tail.

    Returns ``None`` if fewer than four tail bins carry weight.
    """
    e, f = profile.smoothed_energy, profile.smoothed_weight
    d = np.abs(e - fit.peak)
    sel = (d > start_widths * fit.gamma_eff) & (f > 0)
    if np.count_nonzero(sel) < 4:
        return None
    x, y = d[sel], np.log(f[sel])
    lin = stats.linregress(x, y)
    pw = stats.linregress(np.log(x), y)
    return TailFit(
        decay_scale=float(-1.0 / lin.slope) if lin.slope != 0 else math.inf,
        intercept=float(lin.intercept),
        r_squared_exponential=float(lin.rvalue**2),
        r_squared_power=float(pw.rvalue**2),
    )
