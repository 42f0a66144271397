"""The exponential-Gaussian convolution between its two limits.

Run: python demos/decay_models.py
"""
import numpy as np

from decoherence.convolution import (
    convolution_numeric,
    convolution_value,
    decoherence_time,
    exponential_model,
    fit_all,
    gaussian_model,
)

sigma = 1.0
t = np.linspace(0, 6, 601)
print("Gamma/sigma   tau(conv)  tau(exp)  tau(gauss)")
for ratio in (0.01, 0.1, 1.0, 10.0, 100.0):
    g = ratio * sigma
    tt = np.linspace(0, 10 / min(g, sigma), 4001)
    print(f"{ratio:10.2f}  {decoherence_time(tt, convolution_value(g, sigma, tt)):9.3f}"
          f"  {2 / g:8.3f}  {np.sqrt(2) / sigma:9.3f}")

# closed form against the defining integral
print("closed form vs quadrature at t=2:", convolution_value(1.0, 1.0, 2.0), convolution_numeric(1.0, 1.0, 2.0))

# fitting noisy data generated from the convolution
rng = np.random.default_rng(1)
y = convolution_value(1.0, 1.0, t) + 0.003 * rng.standard_normal(t.size)
for kind, fit in fit_all(t, y, floor=0.0).items():
    print(f"{kind:12s} gamma={fit.params.gamma:.3f} sigma={fit.params.sigma:.3f} rms={fit.rms_residual:.1e}")
print("pure limits at t=1:", exponential_model(1.0, 1.0), gaussian_model(1.0, 1.0))
