import numpy as np
import pytest

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0, -1.0]).astype(complex)
PAULI = {"x": SX, "y": SY, "z": SZ}


def site_operator(op, i, n):
    """``op`` acting on spin ``i`` of ``n`` via Kronecker products (spin 0 leftmost)."""
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Desk-scale configurations that exercise every recipe in seconds.
SMALL_CONFIGS = {
    "fig1_overlap": {"model": {"n_spins": 6}, "sweep": {"values": [0.5, 2.0]}},
    "fig2_crossover": {
        "model": {"n_spins": 5},
        "sweep": {"values": [0.3, 2.0, 8.0]},
        "analysis": {"n_times": 80, "floor": 0.05},
    },
    "spin_scaling": {
        "model": {"n_spins": 6, "n_seeds": 2},
        "sweep": {"values": [0.05, 0.1, 4.0, 8.0]},
        "analysis": {"n_times": 100, "reference_states": 4, "floor": 0.05},
    },
    "fig3_qbm": {
        "sweep": {"values": [1e-3, 3e-3]},
        "analysis": {"traces": [{"gamma0": 1e-3, "t0": 3e-3}], "n_times": 40},
    },
    "figA1_zeroT": {
        "analysis": {"t_max": 0.02, "n_times": 201, "early_t_max": 0.006, "late_window": [0.01, 0.02]},
    },
}


def small_config(recipe, **extra):
    from decoherence.config import validate_dict

    return validate_dict({"recipe": recipe, **SMALL_CONFIGS[recipe], **extra})


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one ``CRITERION n PASS|FAIL`` line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
