"""Random two-body spin bath coupled to a central spin.

The central spin couples to its environment through ``lambda * sigma_z (x) H_I``
with ``H_I = sum_i a_i sigma^z_i``, while the environment evolves under
``H_E = sum_alpha sum_{i<j} b^alpha_ij sigma^alpha_i sigma^alpha_j``.
All couplings are standard normal draws.

Basis convention: computational basis index ``k`` encodes spin ``i`` in bit
``N-1-i`` (spin 0 is the most significant bit, matching ``np.kron`` ordering),
and ``s_i(k) = +1`` when that bit is 0.

``H_I`` is diagonal in this basis and is stored as a vector. Every term of
``H_E`` is real (``sigma^y sigma^y`` has real entries), so ``H_E`` is stored as
a dense real symmetric matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

AXES = ("x", "y", "z")

# Dense 2^N x 2^N float64 storage: N = 14 is already 2 GiB.
MAX_DENSE_SPINS = 14
MAX_DIAGONAL_SPINS = 30


class CapacityError(ValueError):
    """Requested bath is too large to address or store densely."""


@dataclass(frozen=True)
class SpinBathConfig:
    n_spins: int
    lam: float
    seed: int = 0
    include_axes: tuple[str, ...] = AXES

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValueError(f"n_spins must be a positive integer, got {self.n_spins!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")
        axes = tuple(self.include_axes)
        if not axes or any(ax not in AXES for ax in axes):
            raise ValueError(f"include_axes must be a non-empty subset of {AXES}, got {axes!r}")
        object.__setattr__(self, "include_axes", tuple(ax for ax in AXES if ax in axes))

    @property
    def dim(self) -> int:
        return 2**self.n_spins


def pairs(n_spins: int) -> list[tuple[int, int]]:
    """Ordered pairs ``i < j`` in row-major order."""
    return list(combinations(range(n_spins), 2))


def spin_signs(n_spins: int) -> np.ndarray:
    """Array ``s[i, k]`` of sigma^z eigenvalues of spin ``i`` in basis state ``k``."""
    k = np.arange(2**n_spins)
    shifts = n_spins - 1 - np.arange(n_spins)
    return 1 - 2 * ((k[None, :] >> shifts[:, None]) & 1)


def draw_couplings(config: SpinBathConfig) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Draw ``a`` then ``b^x``, ``b^y``, ``b^z`` (each over ordered pairs).

    All three axes are always drawn so that the stream, and therefore every
    coupling, is independent of ``include_axes``; excluded axes are zeroed.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_spins
    a = rng.standard_normal(n)
    npairs = n * (n - 1) // 2
    b = {}
    for ax in AXES:
        vals = rng.standard_normal(npairs)
        b[ax] = vals if ax in config.include_axes else np.zeros(npairs)
    return a, b


def _check_capacity(n_spins: int, limit: int) -> None:
    if n_spins > limit:
        raise CapacityError(
            f"n_spins={n_spins} exceeds the supported maximum of {limit} "
            f"(dimension 2^{n_spins} = {2**n_spins})"
        )


def interaction_diagonal(a: np.ndarray) -> np.ndarray:
    """Diagonal of ``sum_i a_i sigma^z_i`` in the computational basis."""
    a = np.asarray(a, dtype=float)
    _check_capacity(a.size, MAX_DIAGONAL_SPINS)
    return a @ spin_signs(a.size)


def environment_matrix(n_spins: int, b: dict[str, np.ndarray]) -> np.ndarray:
    """Dense ``sum_alpha sum_{i<j} b^alpha_ij sigma^alpha_i sigma^alpha_j``."""
    _check_capacity(n_spins, MAX_DENSE_SPINS)
    dim = 2**n_spins
    h = np.zeros((dim, dim))
    if n_spins < 2:
        return h
    ps = pairs(n_spins)
    bx_all, by_all, bz_all = (np.asarray(b.get(ax, np.zeros(len(ps))), float) for ax in AXES)
    k = np.arange(dim)
    s = spin_signs(n_spins)
    diag = np.zeros(dim)
    for p, (i, j) in enumerate(ps):
        ss = s[i] * s[j]
        bx, by, bz = bx_all[p], by_all[p], bz_all[p]
        if bz:
            diag += bz * ss
        if bx or by:
            flip = k ^ ((1 << (n_spins - 1 - i)) | (1 << (n_spins - 1 - j)))
            # sigma^y sigma^y = -s_i s_j times the two-spin flip
            h[flip, k] += bx - by * ss
    h[k, k] += diag
    return h


@dataclass(frozen=True, eq=False)
class SpinBathModel:
    config: SpinBathConfig
    a: np.ndarray
    b: dict[str, np.ndarray]
    h_int_diag: np.ndarray = field(repr=False)
    h_env: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.a, self.h_int_diag, self.h_env, *self.b.values()):
            arr.flags.writeable = False

    @property
    def n_spins(self) -> int:
        return self.config.n_spins

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def lam(self) -> float:
        return self.config.lam

    def with_lambda(self, lam: float) -> "SpinBathModel":
        """Same couplings, different coupling strength (no rebuild)."""
        cfg = SpinBathConfig(self.n_spins, lam, self.config.seed, self.config.include_axes)
        return SpinBathModel(cfg, self.a, self.b, self.h_int_diag, self.h_env)

    def to_json(self) -> str:
        return model_to_json(self)


def build_interaction(config: SpinBathConfig) -> np.ndarray:
    a, _ = draw_couplings(config)
    return interaction_diagonal(a)


def build_environment(config: SpinBathConfig) -> np.ndarray:
    _check_capacity(config.n_spins, MAX_DENSE_SPINS)
    _, b = draw_couplings(config)
    return environment_matrix(config.n_spins, b)


def build_model(config: SpinBathConfig) -> SpinBathModel:
    _check_capacity(config.n_spins, MAX_DENSE_SPINS)
    a, b = draw_couplings(config)
    return SpinBathModel(
        config, a, b, interaction_diagonal(a), environment_matrix(config.n_spins, b)
    )


def model_from_couplings(
    a, b: dict[str, np.ndarray], lam: float = 0.0, seed: int = 0
) -> SpinBathModel:
    """Assemble a model from explicit couplings (hand-built test cases, JSON replay)."""
    a = np.asarray(a, dtype=float)
    n = a.size
    npairs = n * (n - 1) // 2
    full = {}
    for ax in AXES:
        vals = np.asarray(b.get(ax, np.zeros(npairs)), dtype=float)
        if vals.shape != (npairs,):
            raise ValueError(f"b[{ax!r}] must have {npairs} entries, got shape {vals.shape}")
        full[ax] = vals
    axes = tuple(ax for ax in AXES if np.any(full[ax])) or AXES
    cfg = SpinBathConfig(n, lam, seed, axes)
    return SpinBathModel(cfg, a, full, interaction_diagonal(a), environment_matrix(n, full))


def build_perturbed(model: SpinBathModel, sign: int, lam: float | None = None) -> np.ndarray:
    """``H_E + sign * lam * H_I`` as a dense matrix."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lam = model.lam if lam is None else lam
    h = np.array(model.h_env, copy=True)
    idx = np.arange(model.dim)
    h[idx, idx] += sign * lam * model.h_int_diag
    return h


def model_to_json(model: SpinBathModel) -> str:
    ps = pairs(model.n_spins)
    doc = {
        "n_spins": model.n_spins,
        "seed": model.config.seed,
        "lambda": model.lam,
        "a": model.a.tolist(),
        "b": {
            ax: [[i, j, float(v)] for (i, j), v in zip(ps, model.b[ax])] for ax in AXES
        },
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> SpinBathModel:
    doc = json.loads(text)
    n = int(doc["n_spins"])
    index = {p: q for q, p in enumerate(pairs(n))}
    b = {}
    for ax in AXES:
        vals = np.zeros(len(index))
        for i, j, v in doc.get("b", {}).get(ax, []):
            i, j = int(i), int(j)
            if (min(i, j), max(i, j)) not in index:
                raise ValueError(f"invalid pair ({i}, {j}) for n_spins={n}")
            vals[index[min(i, j), max(i, j)]] = v
        b[ax] = vals
    a = np.asarray(doc["a"], dtype=float)
    if a.size != n:
        raise ValueError(f"expected {n} single-site couplings, got {a.size}")
    return model_from_couplings(a, b, float(doc.get("lambda", 0.0)), int(doc.get("seed", 0)))
