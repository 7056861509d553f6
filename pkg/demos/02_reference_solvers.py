"""Integrate the three ODE systems and the diffusion-reaction PDE once each.

Every dataset target in this package comes from these solvers, so this is
the ground truth being learned. The script prints solution values, step
counts, and a cross-check of the adaptive integrator against quadrature.
"""

import numpy as np

from opnet.function_spaces import GrfSpace, InputFunction, SensorGrid
from opnet.solvers import (PdeConfig, antiderivative_exact,
                           antiderivative_system, diffusion_reaction_solve,
                           pendulum_system, riccati_system, solve_ode_rk45)

fine = SensorGrid.uniform(0.0, 1.0, 1001)
u = GrfSpace(l=0.2).sample_many(fine, 1, seed=3)[0]

traj = solve_ode_rk45(antiderivative_system(), u)
print(f"antiderivative: {traj.n_accepted} accepted / {traj.n_rejected} rejected steps")
xs = np.array([0.25, 0.5, 0.75, 1.0])
rk = traj.eval(xs)[:, 0]
quad = antiderivative_exact(u, xs)
print("  x        rk45          quadrature    |diff|")
for x, a, b in zip(xs, rk, quad):
    print(f"  {x:.2f}  {a:+.8f}  {b:+.8f}  {abs(a - b):.1e}")

traj = solve_ode_rk45(riccati_system(), u)
print(f"\nriccati s' = u - s^2: s(1) = {traj.eval(1.0)[0]:+.6f} "
      f"({traj.n_accepted} steps, diverged={traj.diverged})")

big = InputFunction(x=np.linspace(0.0, 1.0, 1001), values=np.full(1001, -4.0))
blow = solve_ode_rk45(riccati_system(), big)
print(f"riccati with u = -4 everywhere: diverged={blow.diverged} ({blow.reason})")

for horizon in (1.0, 5.0):
    grid = SensorGrid.uniform(0.0, horizon, 1001)
    uu = GrfSpace(l=0.2).sample_many(grid, 1, seed=3)[0]
    traj = solve_ode_rk45(pendulum_system(k=1.0, horizon=horizon), uu)
    print(f"\npendulum T={horizon:g}: angle({horizon:g}) = {traj.eval(horizon)[0]:+.6f}, "
          f"{traj.n_accepted} steps")

sol = diffusion_reaction_solve(u, PdeConfig())
mid = sol.s[50, 50]
print(f"\ndiffusion-reaction on the default 100x100 grid: "
      f"s(x=0.5, t=0.5) = {mid:+.6f}, diverged={sol.diverged}")
print(f"solution range [{sol.s.min():+.4f}, {sol.s.max():+.4f}]")
