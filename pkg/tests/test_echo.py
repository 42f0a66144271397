import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from conftest import PAULI, site_operator
from decoherence.echo import (
    DecoherenceTrace,
    EchoPropagator,
    InitialEnvironmentState,
    adaptive_times,
    boltzmann_weights,
    decoherence_factor,
    echo_generator_derivative,
    echo_generator_residual,
    echo_operator,
    thermal_decoherence_factor,
)
from decoherence.errors import NumericalError
from decoherence.spectral import diagonalize
from decoherence.spin_model import SpinBathConfig, build_model, model_from_couplings


def composite_coherence(model, lam, n, times):
    """``2 rho_10(t)`` of the central spin from the full (N+1)-spin evolution."""
    dim = model.dim
    h_tot = lam * np.kron(np.diag([1.0, -1.0]), np.diag(model.h_int_diag)) + np.kron(np.eye(2), model.h_env)
    env = diagonalize(model.h_env)
    psi0 = np.kron(np.array([1.0, 1.0]) / math.sqrt(2), env.eigenvectors[:, n])
    e, v = np.linalg.eigh(h_tot)
    c = v.T @ psi0
    out = []
    for t in times:
        psi = v @ (np.exp(-1j * e * t) * c)
        rho = np.outer(psi, psi.conj()).reshape(2, dim, 2, dim)
        rho_s = np.einsum("aibi->ab", rho)
        out.append(2 * rho_s[1, 0])
    return np.array(out)


@pytest.mark.parametrize("n_spins", [1, 2, 3, 4])
def test_matches_composite_evolution(n_spins):
    model = build_model(SpinBathConfig(n_spins, 0.7, seed=n_spins))
    times = np.linspace(0, 10, 100)
    for n in range(model.dim):
        r = decoherence_factor(model, n, times).values
        np.testing.assert_allclose(r, composite_coherence(model, 0.7, n, times), atol=1e-10, rtol=0)


def test_matches_direct_matrix_exponentials():
    model = build_model(SpinBathConfig(5, 0.4, seed=2))
    env = diagonalize(model.h_env)
    psi = env.eigenvectors[:, 9]
    r = decoherence_factor(model, 9, [0.0, 0.3, 2.5]).values
    for t, val in zip([0.3, 2.5], r[1:]):
        assert val == pytest.approx(psi @ echo_operator(model, 0.4, t) @ psi, abs=1e-12)


def test_hand_case_single_spin_no_environment():
    # H_E = 0, H_I = a sigma_z: r(t) = exp(-2 i lam a s t)
    model = model_from_couplings([0.8], {}, lam=0.5)
    t = np.linspace(0, 3, 7)
    r0 = decoherence_factor(model, 0, t).values
    r1 = decoherence_factor(model, 1, t).values
    np.testing.assert_allclose(np.abs(r0), 1.0, atol=1e-14)
    np.testing.assert_allclose(r0 * r1, 1.0, atol=1e-14)
    np.testing.assert_allclose(r0, np.exp(2j * 0.5 * 0.8 * t * np.sign(np.angle(r0[1]) or 1)), atol=1e-12)


def test_zero_coupling_is_identity():
    model = build_model(SpinBathConfig(4, 0.0, seed=1))
    r = decoherence_factor(model, 3, np.linspace(0, 20, 30)).values
    np.testing.assert_allclose(r, 1.0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0), st.integers(2, 5))
def test_modulus_bounded_and_unit_at_origin(seed, lam, n_spins):
    model = build_model(SpinBathConfig(n_spins, lam, seed=seed))
    r = decoherence_factor(model, 0, np.linspace(0, 30, 40)).values
    assert r[0] == 1.0
    assert np.all(np.abs(r) <= 1 + 1e-12)


def test_time_reversal_conjugates():
    model = build_model(SpinBathConfig(4, 0.9, seed=3))
    prop = EchoPropagator(model)
    psi = diagonalize(model.h_env).eigenvectors[:, 5]
    t = np.linspace(0.1, 4, 9)
    np.testing.assert_allclose(prop.amplitudes(psi, -t), np.conj(prop.amplitudes(psi, t)), atol=1e-12)


def test_chunked_amplitudes_agree(monkeypatch):
    import decoherence.echo as echo

    model = build_model(SpinBathConfig(5, 0.6, seed=0))
    prop = EchoPropagator(model)
    states = diagonalize(model.h_env).eigenvectors[:, :4]
    t = np.linspace(0, 5, 37)
    full = prop.amplitudes(states, t)
    monkeypatch.setattr(echo, "CHUNK_ELEMENTS", 100)
    np.testing.assert_allclose(prop.amplitudes(states, t), full, atol=1e-13)


def test_input_validation():
    model = build_model(SpinBathConfig(3, 0.5))
    with pytest.raises(ValueError):
        decoherence_factor(model, 0, [0.0, 2.0, 1.0])
    with pytest.raises(IndexError):
        decoherence_factor(model, 8, [0.0])
    with pytest.raises(ValueError):
        decoherence_factor(model, InitialEnvironmentState.thermal(1.0), [0.0])
    with pytest.raises(ValueError):
        InitialEnvironmentState("mixed")
    with pytest.raises(ValueError):
        EchoPropagator(model).amplitudes(np.ones(4), [0.0])


def test_adaptive_grid_reaches_floor():
    model = build_model(SpinBathConfig(3, 1.0, seed=0))
    prop = EchoPropagator(model)
    psi = diagonalize(model.h_env).eigenvectors[:, 4]
    t = adaptive_times(prop, psi, 50, floor=0.9)
    r = np.abs(prop.amplitudes(psi, t)[:, 0])
    assert t[0] == 0 and t.size == 50
    assert r[-1] <= 0.9 + 1e-12 and r[0] == pytest.approx(1.0)


def test_adaptive_grid_oscillation_floor():
    # a 3-spin bath never decays to 1e-6; the grid ends near the saturation level instead
    model = build_model(SpinBathConfig(3, 1.0, seed=0))
    prop = EchoPropagator(model)
    t = adaptive_times(prop, diagonalize(model.h_env).eigenvectors[:, 4], 50, floor=1e-6)
    assert t[-1] < 1e6


def test_trace_csv_and_metadata(tmp_path):
    model = build_model(SpinBathConfig(3, 0.5, seed=7))
    trace = decoherence_factor(model, 2, np.linspace(0, 1, 5))
    trace.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "time,re,im,abs" and len(lines) == 6
    meta = json.loads((tmp_path / "r.json").read_text())
    assert meta["seed"] == 7 and meta["initial"]["index"] == 2 and meta["lambda"] == 0.5
    with pytest.raises(ValueError):
        trace.values[0] = 0


def test_boltzmann_weights_stable():
    w = boltzmann_weights([1e4, 1e4 + 1, 1e4 + 2], 1000.0)
    assert w[0] == pytest.approx(1.0) and np.all(np.isfinite(w))
    np.testing.assert_allclose(boltzmann_weights([0, 1, 2], 0.0), 1 / 3)
    np.testing.assert_array_equal(boltzmann_weights([2.0, -1.0, 0.5], math.inf), [0, 1, 0])
    with pytest.raises(ValueError):
        boltzmann_weights([0.0], -1.0)


def test_thermal_limits():
    model = build_model(SpinBathConfig(4, 0.8, seed=5))
    env = diagonalize(model.h_env)
    prop = EchoPropagator(model)
    t = np.linspace(0, 5, 21)
    ground = decoherence_factor(model, 0, t, prop, env).values
    cold = thermal_decoherence_factor(model, math.inf, t, prop, env)
    np.testing.assert_allclose(cold.values, ground, atol=1e-13)
    hot = thermal_decoherence_factor(model, 0.0, t, prop, env).values
    mean = np.mean([decoherence_factor(model, n, t, prop, env).values for n in range(model.dim)], axis=0)
    np.testing.assert_allclose(hot, mean, atol=1e-13)
    assert cold.metadata["n_states"] == 1


@given(st.integers(0, 1000), st.floats(0.0, 3.0))
@settings(max_examples=20, deadline=None)
def test_thermal_bounded_by_largest_eigenstate_modulus(seed, beta):
    model = build_model(SpinBathConfig(4, 0.8, seed=seed))
    env = diagonalize(model.h_env)
    prop = EchoPropagator(model)
    t = np.linspace(0, 4, 17)
    thermal = thermal_decoherence_factor(model, beta, t, prop, env).values
    each = np.array([decoherence_factor(model, n, t, prop, env).values for n in range(model.dim)])
    assert np.all(np.abs(thermal) <= np.abs(each).max(axis=0) + 1e-12)


def test_traces_are_bit_identical_on_repeat():
    model = build_model(SpinBathConfig(6, 0.7, seed=2))
    t = np.linspace(0, 3, 50)
    first = decoherence_factor(model, 17, t).values
    second = decoherence_factor(build_model(SpinBathConfig(6, 0.7, seed=2)), 17, t).values
    assert first.tobytes() == second.tobytes()


def test_doubled_interaction_overlap_form_to_first_order():
    # sum_k exp(i (E_n - E^k) t) |<k|n>|^2 with E^k from H_E + 2 lam H_I agrees with
    # the two-propagation echo up to a mismatch quadratic in lam
    model = build_model(SpinBathConfig(8, 0.05, seed=0))
    env = diagonalize(model.h_env)
    n = model.dim // 2
    t = np.linspace(0, 3, 61)
    mismatch = []
    for lam in (0.05, 0.025):
        echo = decoherence_factor(model.with_lambda(lam), n, t, environment=env).values
        pert = diagonalize(model.h_env + np.diag(2 * lam * model.h_int_diag))
        weights = np.abs(pert.eigenvectors.T @ env.eigenvectors[:, n]) ** 2
        overlap_form = np.exp(1j * np.outer(t, env.eigenvalues[n] - pert.eigenvalues)) @ weights
        mismatch.append(np.max(np.abs(echo - overlap_form)))
    assert mismatch[0] / mismatch[1] == pytest.approx(4.0, rel=0.1)
    assert mismatch[0] < 0.05**2 * 4


def test_thermal_truncation_reported():
    model = build_model(SpinBathConfig(4, 0.8, seed=5))
    trace = thermal_decoherence_factor(model, 5.0, np.linspace(0, 1, 3))
    assert 0 <= trace.metadata["truncated_weight"] < 1e-12 * model.dim
    assert trace.metadata["n_states"] < model.dim


def test_generator_first_order_derivative():
    # M'(0) = 2 i lam H_I; central differences converge at second order
    model = build_model(SpinBathConfig(6, 0.3, seed=0))
    target = np.diag(2j * 0.3 * model.h_int_diag)
    errs = [np.linalg.norm(echo_generator_derivative(model, 0.3, dt) - target) for dt in (1e-2, 5e-3, 2.5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generator_residual_commuting_case(seed):
    cfg = SpinBathConfig(6, 0.4, seed=seed, include_axes=("z",))
    model = build_model(cfg)
    assert echo_generator_residual(model, 0.4, 0.2) < 1e-10


def test_generator_residual_grows_with_time():
    model = build_model(SpinBathConfig(5, 0.3, seed=0))
    small = echo_generator_residual(model, 0.3, 0.01)
    larger = echo_generator_residual(model, 0.3, 0.04)
    # leading correction of log M is the commutator term, linear in t relative to 2 i lam H_I t
    assert larger / small == pytest.approx(4.0, rel=0.05)


def test_generator_residual_linear_in_time_n6():
    model = build_model(SpinBathConfig(6, 0.5, seed=0))
    ratio = [echo_generator_residual(model, 0.5, t) / t for t in (1e-3, 5e-4)]
    assert ratio[0] == pytest.approx(ratio[1], rel=0.1)


def test_generator_residual_branch_cut():
    # M = diag(exp(+-2 i lam a t)) reaches eigenphase pi at t = pi / (2 lam a)
    model = model_from_couplings([0.8], {}, lam=0.5)
    assert echo_generator_residual(model, 0.5, 1.0) < 1e-12
    with pytest.raises(NumericalError):
        echo_generator_residual(model, 0.5, math.pi / 0.8)


def test_composite_operator_matches_expm():
    model = build_model(SpinBathConfig(3, 0.6, seed=4))
    hp = model.h_env + np.diag(0.6 * model.h_int_diag)
    hm = model.h_env - np.diag(0.6 * model.h_int_diag)
    np.testing.assert_allclose(echo_operator(model, 0.6, 1.3), expm(1.3j * hp) @ expm(-1.3j * hm), atol=1e-12)


def test_site_operator_convention_matches_interaction():
    model = build_model(SpinBathConfig(3, 0.0, seed=9))
    h = sum(a * site_operator(PAULI["z"], i, 3) for i, a in enumerate(model.a))
    np.testing.assert_allclose(np.diag(h).real, model.h_int_diag, atol=1e-14)


def test_trace_type():
    trace = decoherence_factor(build_model(SpinBathConfig(2, 0.1)), 0, [0.0, 1.0])
    assert isinstance(trace, DecoherenceTrace)
