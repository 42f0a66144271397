"""Decoherence factor of the central spin by exact two-sided evolution.

For an environment eigenstate ``|n>`` the factor is the echo amplitude
``r(t) = <n| e^{i H_+ t} e^{-i H_- t} |n>`` with ``H_pm = H_E pm lam H_I``,
evaluated as the overlap of ``e^{-i H_+ t}|n>`` with ``e^{-i H_- t}|n>``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm, logm

from .errors import NumericalError
from .output import to_jsonable, write_csv
from .spectral import SpectralDecomposition, diagonalize, middle_index
from .spin_model import SpinBathModel, build_perturbed

# Complex work arrays are chunked to roughly this many elements.
CHUNK_ELEMENTS = 1 << 22
THERMAL_CUTOFF = 1e-12
MAX_LOGM_SPINS = 10


@dataclass(frozen=True)
class InitialEnvironmentState:
    """Eigenstate ``index`` of ``H_E`` or a thermal state at inverse temperature ``beta``."""

    kind: str
    index: int | None = None
    beta: float | None = None
    energy: float | None = None

    def __post_init__(self):
        if self.kind == "eigenstate":
            if self.index is None or self.index < 0:
                raise ValueError("eigenstate needs a non-negative index")
        elif self.kind == "thermal":
            if self.beta is None or not self.beta >= 0:
                raise ValueError("thermal state needs beta >= 0")
        else:
            raise ValueError(f"unknown initial state kind {self.kind!r}")

    @classmethod
    def eigenstate(cls, index: int, energy: float | None = None) -> "InitialEnvironmentState":
        return cls("eigenstate", index=int(index), energy=energy)

    @classmethod
    def thermal(cls, beta: float) -> "InitialEnvironmentState":
        return cls("thermal", beta=float(beta))

    def describe(self) -> dict:
        if self.kind == "eigenstate":
            return {"kind": "eigenstate", "index": self.index, "energy": self.energy}
        return {"kind": "thermal", "beta": self.beta}


@dataclass(frozen=True, eq=False)
class DecoherenceTrace:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times.flags.writeable = False
        self.values.flags.writeable = False

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.values)

    def to_csv(self, path) -> Path:
        """Write ``time,re,im,abs`` plus a ``.json`` metadata sidecar."""
        path = Path(path)
        v = self.values
        write_csv(path, ("time", "re", "im", "abs"), (self.times, v.real, v.imag, np.abs(v)))
        path.with_suffix(".json").write_text(
            json.dumps(to_jsonable(self.metadata), indent=2, sort_keys=True) + "\n"
        )
        return path


class EchoPropagator:
    """Eigendecompositions of ``H_+`` and ``H_-`` for repeated echo evaluations."""

    def __init__(self, model: SpinBathModel, lam: float | None = None):
        self.model = model
        self.lam = model.lam if lam is None else float(lam)
        self.plus = diagonalize(build_perturbed(model, +1, self.lam), check=False)
        self.minus = diagonalize(build_perturbed(model, -1, self.lam), check=False)

    def amplitudes(self, states: np.ndarray, times) -> np.ndarray:
        """Echo amplitudes for real states (columns); returns shape ``(len(times), k)``.

        Times are stacked with states into wide real matrix products, which
        avoids complex arithmetic on the dense eigenvector matrices.
        """
        psi = np.asarray(states, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        t = np.asarray(times, dtype=float)
        dim, k = psi.shape
        if dim != self.model.dim:
            raise ValueError(f"state dimension {dim} does not match model dimension {self.model.dim}")
        cp = self.plus.eigenvectors.T @ psi
        cm = self.minus.eigenvectors.T @ psi
        out = np.empty((t.size, k), dtype=complex)
        step = max(1, CHUNK_ELEMENTS // (dim * k))
        for lo in range(0, t.size, step):
            tt = t[lo:lo + step]
            ar, ai = self._rotate(self.plus, cp, tt)
            br, bi = self._rotate(self.minus, cm, tt)
            # conj(a) * b with a = ar - i ai, b = br - i bi
            re = np.einsum("dtk,dtk->tk", ar, br) + np.einsum("dtk,dtk->tk", ai, bi)
            im = np.einsum("dtk,dtk->tk", ai, br) - np.einsum("dtk,dtk->tk", ar, bi)
            out[lo:lo + step] = re + 1j * im
        return out

    @staticmethod
    def _rotate(dec: SpectralDecomposition, coeffs: np.ndarray, t: np.ndarray):
        # V e^{-iEt} c = V (cos Et c) - i V (sin Et c), columns ordered (time, state)
        phase = np.multiply.outer(dec.eigenvalues, t)
        dim, k = coeffs.shape
        c = (np.cos(phase)[:, :, None] * coeffs[:, None, :]).reshape(dim, -1)
        s = (np.sin(phase)[:, :, None] * coeffs[:, None, :]).reshape(dim, -1)
        v = dec.eigenvectors
        return (v @ c).reshape(dim, t.size, k), (v @ s).reshape(dim, t.size, k)


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if np.any(np.diff(t) < 0):
        raise ValueError("times must be ascending")
    return t


def adaptive_times(
    propagator: EchoPropagator,
    state: np.ndarray,
    n_points: int = 400,
    floor: float = 0.01,
    t_min: float = 1e-3,
    t_max: float = 1e6,
    n_probe: int = 160,
) -> np.ndarray:
    """Uniform grid on ``[0, t_end]`` where ``|r|`` first reaches ``floor``.

    If the echo saturates on an oscillation floor above ``floor``, ``t_end`` is
    where ``|r|`` first comes within 50% of that floor's level (or halfway
    from 1 to it, for floors above 2/3).
    """
    probe = np.geomspace(t_min, t_max, n_probe)
    r = np.abs(propagator.amplitudes(state, probe)[:, 0])
    sat = float(np.median(r[-n_probe // 4:]))
    level = max(floor, min(1.5 * sat, 0.5 * (1.0 + sat)))
    hit = np.nonzero(r <= level)[0]
    t_end = probe[hit[0]] if hit.size else probe[-1]
    return np.linspace(0.0, t_end, n_points)


def _metadata(model: SpinBathModel, lam: float, initial: InitialEnvironmentState, **extra) -> dict:
    return {
        "lambda": lam,
        "n_spins": model.n_spins,
        "seed": model.config.seed,
        "initial": initial.describe(),
        **extra,
    }


def decoherence_factor(
    model: SpinBathModel,
    initial: InitialEnvironmentState | int | None = None,
    times=None,
    propagator: EchoPropagator | None = None,
    environment: SpectralDecomposition | None = None,
    n_points: int = 400,
) -> DecoherenceTrace:
    """Echo decoherence factor for an eigenstate of ``H_E``.

    Parameters
    ----------
    initial
        Eigenstate index (default: middle of the spectrum) or an
        :class:`InitialEnvironmentState`.
    times
        Ascending grid starting at 0; default is an adaptive uniform grid.
    propagator, environment
        Precomputed decompositions of ``H_pm`` and ``H_E`` for reuse across calls.
    """
    env = diagonalize(model.h_env, check=False) if environment is None else environment
    if initial is None:
        initial = middle_index(model.dim)
    if not isinstance(initial, InitialEnvironmentState):
        initial = InitialEnvironmentState.eigenstate(initial)
    if initial.kind != "eigenstate":
        raise ValueError("use thermal_decoherence_factor for thermal states")
    n = initial.index
    if n >= model.dim:
        raise IndexError(f"eigenstate index {n} out of range for dimension {model.dim}")
    initial = InitialEnvironmentState.eigenstate(n, float(env.eigenvalues[n]))
    prop = EchoPropagator(model) if propagator is None else propagator
    psi = env.eigenvectors[:, n]
    if times is None:
        t = adaptive_times(prop, psi, n_points)
    else:
        t = _check_times(times)
    values = prop.amplitudes(psi, t)[:, 0]
    values[t == 0] = 1.0
    return DecoherenceTrace(t, values, _metadata(model, prop.lam, initial))


def boltzmann_weights(energies, beta: float) -> np.ndarray:
    """Normalized ``exp(-beta E)`` with the largest exponent subtracted first."""
    e = np.asarray(energies, dtype=float)
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if math.isinf(beta):
        w = (e == e.min()).astype(float)
    else:
        x = -beta * e
        w = np.exp(x - x.max())
    return w / w.sum()


def thermal_decoherence_factor(
    model: SpinBathModel,
    beta: float,
    times,
    propagator: EchoPropagator | None = None,
    environment: SpectralDecomposition | None = None,
) -> DecoherenceTrace:
    """Boltzmann average of the eigenstate factors over the spectrum of ``H_E``.

    Eigenstates with weight below ``1e-12`` are skipped; their total weight is
    a bound on the truncation error and is stored as ``truncated_weight``.
    """
    env = diagonalize(model.h_env, check=False) if environment is None else environment
    t = _check_times(times)
    p = boltzmann_weights(env.eigenvalues, beta)
    keep = p >= THERMAL_CUTOFF
    prop = EchoPropagator(model) if propagator is None else propagator
    states = env.eigenvectors[:, keep]
    values = np.zeros(t.size, dtype=complex)
    per_chunk = max(1, CHUNK_ELEMENTS // (model.dim * max(1, t.size)))
    idx = np.nonzero(keep)[0]
    for lo in range(0, idx.size, per_chunk):
        cols = slice(lo, lo + per_chunk)
        values += prop.amplitudes(states[:, cols], t) @ p[idx[cols]]
    values /= p[keep].sum()
    values[t == 0] = 1.0
    init = InitialEnvironmentState.thermal(beta)
    meta = _metadata(model, prop.lam, init, truncated_weight=float(p[~keep].sum()), n_states=int(keep.sum()))
    return DecoherenceTrace(t, values, meta)


def echo_operator(model: SpinBathModel, lam: float, t: float) -> np.ndarray:
    """``M(t) = e^{i H_+ t} e^{-i H_- t}`` as a dense matrix."""
    hp = build_perturbed(model, +1, lam)
    hm = build_perturbed(model, -1, lam)
    return expm(1j * t * hp) @ expm(-1j * t * hm)


def echo_generator_residual(model: SpinBathModel, lam: float, t: float) -> float:
    """Relative distance between ``log M(t)`` and its first-order generator ``2 i lam H_I t``.

    Raises
    ------
    NumericalError
        If an eigenphase of ``M`` approaches the branch cut of the principal
        logarithm (``t`` too large).
    ValueError
        Dimension above ``2**10`` or zero generator.
    """
    if model.n_spins > MAX_LOGM_SPINS:
        raise ValueError(f"dense logarithm limited to {MAX_LOGM_SPINS} spins")
    m = echo_operator(model, lam, t)
    phases = np.angle(np.linalg.eigvals(m))
    if np.max(np.abs(phases)) > math.pi - 1e-6:
        raise NumericalError(f"principal logarithm undefined: eigenphase near pi at t={t}")
    log_m = logm(m)
    target = np.diag(2j * lam * t * model.h_int_diag)
    norm = np.linalg.norm(target)
    if norm == 0:
        raise ValueError("generator vanishes (lam, t or H_I is zero)")
    return float(np.linalg.norm(log_m - target) / norm)


def echo_generator_derivative(model: SpinBathModel, lam: float, dt: float) -> np.ndarray:
    """Central-difference estimate of ``dM/dt`` at ``t = 0``."""
    return (echo_operator(model, lam, dt) - echo_operator(model, lam, -dt)) / (2 * dt)
