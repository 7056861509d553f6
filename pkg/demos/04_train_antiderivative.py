"""Train a branch-trunk network to integrate functions, in about a minute.

A scaled-down version of the antiderivative study: 50 random input
functions, their integrals from the reference solver, and a few thousand
Adam iterations. Prints the error history and spot-checks the trained
operator against quadrature on a fresh input.
"""

import numpy as np

from opnet.data import build_ode_dataset
from opnet.deeponet import build_deeponet, deeponet_forward
from opnet.experiments import TrainConfig, train
from opnet.function_spaces import GrfSpace, SensorGrid, restrict_to_sensors
from opnet.solvers import antiderivative_exact

space = GrfSpace(l=0.2)
m = 100
train_set = build_ode_dataset("antiderivative", space, m=m, n_u=50, y_per_u=50, seed=0)
test_set = build_ode_dataset("antiderivative", space, m=m, n_u=100, y_per_u=20, seed=1)
print(f"train: {len(train_set)} records from {train_set.n_distinct_u} inputs; "
      f"test: {len(test_set)} records")

model = build_deeponet("unstacked", m=m, dim_y=1, seed=0)
print(f"unstacked model, {model.parameter_count()} parameters")

cfg = TrainConfig(iterations=5000, eval_cadence=500, seed=0)
trained, report = train(model, train_set, test_set, cfg)
print("\niteration   train MSE   test MSE")
for it, trn, tst in report.history_rows():
    print(f"  {it:7d}   {trn:.3e}   {tst:.3e}")

print("\nfresh input, integral at a few points:")
fine = SensorGrid.uniform(0.0, 1.0, 1001)
u = space.sample_many(fine, 1, seed=99)[0]
sensors = restrict_to_sensors(u, SensorGrid.uniform(0.0, 1.0, m))
ys = np.array([0.25, 0.5, 0.75, 1.0])
predicted = deeponet_forward(trained, sensors, ys)
exact = antiderivative_exact(u, ys)
print("  y       predicted     exact        |diff|")
for y, p, e in zip(ys, predicted, exact):
    print(f"  {y:.2f}  {p:+.6f}   {e:+.6f}   {abs(p - e):.2e}")
