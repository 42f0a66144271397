"""Fringe visibility of a two-packet superposition in an Ohmic bath.

Run: python demos/brownian_motion.py   (about 30 s)
"""
import numpy as np

from decoherence.convolution import fit_all
from decoherence.qbm import QbmConfig, adaptive_rb_trace, decoherence_time_sweep, fit_power_law, qbm_zero_temperature_trace

base = QbmConfig(gamma0=1e-3, cutoff=500.0, temperature=2.5e4, x0=10.0, delta=1.0)

for g0 in (1e-3, 3e-5, 1e-6):
    trace = adaptive_rb_trace(base.with_gamma0(g0), floor=1e-3, n_times=300)
    t, r = trace.accepted()
    fits = fit_all(t, r, floor=1e-3)
    best = min(fits, key=lambda k: fits[k].rms_residual)
    print(f"gamma0={g0:.0e}: decays to 1e-3 by t={t[-1]:.3g}, best model {best}, "
          + ", ".join(f"{k} r2={f.r_squared:.4f}" for k, f in fits.items()))

gammas = np.geomspace(1e-3, 1e-2, 5)
taus = decoherence_time_sweep(base, gammas)
slope = np.polyfit(np.log(gammas), np.log(taus), 1)[0]
print(f"tau_D ~ gamma0^{slope:.3f} in the Gaussian regime")

cold = QbmConfig(gamma0=0.01, cutoff=500.0, temperature=0.0, x0=5.0)
trace = qbm_zero_temperature_trace(cold, np.linspace(0, 0.1, 2001), step=5e-5)
pl = fit_power_law(trace.times, trace.r_b, (0.01, 0.1))
print(f"zero temperature: r_B(0.1)={trace.r_b[-1]:.3f}, late tail ~ t^{pl.exponent:.3f}")
