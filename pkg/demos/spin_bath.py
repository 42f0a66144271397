"""Spin bath walkthrough: spectrum, overlap profile and echo decay.

Run: python demos/spin_bath.py   (about 10 s)
"""
import warnings

import numpy as np

from decoherence import SpinBathConfig, build_model, decoherence_factor, fit_all
from decoherence.spectral import (
    density_of_states,
    diagonalize,
    effective_width_or_golden_rule,
    fit_lorentzian,
    golden_rule_gamma,
    measure_v_squared,
    middle_index,
    overlap_profile,
)

N = 10
model = build_model(SpinBathConfig(N, 0.0, seed=0))
env = diagonalize(model.h_env)
dos = density_of_states(env.eigenvalues)
print(f"{2**N} levels, DOS width {dos.width:.2f}, skewness {dos.skewness:+.3f}, "
      f"excess kurtosis {dos.excess_kurtosis:+.3f}")

# overlap of a mid-spectrum eigenstate with the eigenstates of H_E + 2 lam H_I
n = middle_index(env.dim)
# profile bins are about 2 energy units wide, so widths well below that are not resolved
for lam in (0.7, 1.0, 2.0):
    h = np.array(model.h_env)
    h[np.diag_indices_from(h)] += 2 * lam * model.h_int_diag
    prof = overlap_profile(env, n, diagonalize(h))
    v2 = measure_v_squared(model, lam, window=0.15 * dos.width, reference_index=n, decomposition=env)
    eta = float(dos.states_per_energy(env.eigenvalues[n]))
    fit = fit_lorentzian(prof)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        second = effective_width_or_golden_rule(v2, dos, env.eigenvalues[n])
    label = "golden-rule fallback" if second.fallback else "second order"
    print(f"lam={lam:4.1f}: Lorentzian width {fit.gamma_eff:7.3f}, golden rule {golden_rule_gamma(v2, eta):7.3f}, "
          f"{label} {second.gamma_eff:7.3f}")

# echo decay: exponential at weak coupling, Gaussian at strong coupling
for lam in (0.2, 1.0, 4.0):
    trace = decoherence_factor(model.with_lambda(lam), n, environment=env, n_points=300)
    fits = fit_all(trace.times, trace.abs, floor=1e-2)
    best = min(fits, key=lambda k: fits[k].rms_residual)
    summary = ", ".join(f"{k} {f.rms_residual:.1e}" for k, f in fits.items())
    print(f"lam={lam:3.1f}: rms {summary}; best {best}")
