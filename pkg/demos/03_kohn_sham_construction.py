# Constructing the exact effective potential of a noninteracting system.
#
# The full pipeline: propagate an interacting pair, extract the density's
# Taylor coefficients, build a compatible noninteracting initial state,
# solve the order-by-order Sturm-Liouville problems for the effective
# potential, propagate the noninteracting system under the truncated
# potential, and measure how fast the density mismatch vanishes at small
# times.  The fitted slope grows with the truncation order.

import numpy as np

from kslab import (
    build_grid,
    build_system,
    construct_ks_initial_state,
    current_divergence,
    density,
    ground_state,
    invert_potential_taylor,
    predict_density_taylor,
)
from kslab.grid import ScalarField, TaylorField
from kslab.quantum import propagate
from kslab.verify import density_mismatch, fit_loglog_slope

omega = build_grid(-3.5, 3.5, 27)
x = omega.x
v = TaylorField(omega, [
    ScalarField(omega, 0.5 * x**2),
    ScalarField(omega, 0.35 * x * np.exp(-(x / 2.2) ** 2)),
    ScalarField(omega, 0.25 * np.cos(0.9 * x) * np.exp(-(x / 2.5) ** 2)),
    ScalarField(omega, 0.8 * np.sin(1.1 * x) * np.exp(-(x / 2.0) ** 2)),
])

interacting = build_system(omega, 6, 2, "fermion-singlet",
                           interaction_strength=1.0, interaction_eps=1.0)
noninteracting = build_system(omega, 6, 2, "fermion-singlet",
                              interaction_strength=0.0)

psi0 = ground_state(interacting, v[0])
dt, steps = 1e-3, 400
target_traj = propagate(interacting, psi0, v, dt, steps, store_states=False)
print(f"propagated the interacting pair for {steps} steps of dt = {dt}")

# ---- compatible noninteracting initial state -------------------------------
n0 = density(psi0)
n1 = -1.0 * current_divergence(psi0)
phi0 = construct_ks_initial_state(noninteracting, n0, n1)
print(f"initial-state density match: "
      f"{np.max(np.abs(density(phi0).values - n0.values)):.1e}")

# ---- invert at increasing truncation orders ---------------------------------
print("\n K   per-order residuals      fitted slope of e(t)")
for K in (0, 1, 2):
    target = predict_density_taylor(interacting, psi0, v.truncated(K), K,
                                    window="omega")
    inv = invert_potential_taylor(target, noninteracting, phi0, K, tol=1e-12)
    traj = propagate(noninteracting, phi0, inv.v_prime, dt, steps,
                     store_states=False)
    e2, _ = density_mismatch(interacting, traj.densities, target_traj.densities)
    slope, lo, hi, _ = fit_loglog_slope(target_traj.times, e2, 10 * dt)
    worst = max(d.residual for d in inv.diagnostics)
    print(f"  {K}   {worst:.1e}              {slope:5.2f}   "
          f"(window [{lo:.3g}, {hi:.3g}])")

print("\nEach extra potential order buys one more power of t in the density"
      "\nreproduction: the noninteracting system tracks the interacting"
      "\ndensity exactly to the constructed order.")
