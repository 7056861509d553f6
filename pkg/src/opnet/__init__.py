"""Operator learning with branch-trunk networks, in plain numpy.

Subpackages:

- nn: dense networks, Adam, gradient checking, parameter serialization
- function_spaces: random input-function samplers and sensor grids
- solvers: reference ODE/PDE solvers that define the target operators
- data: (input function, query point, operator value) dataset handling
- deeponet: branch-trunk models and a dense concat baseline
- experiments: training loop, metrics, rate fitting
- presets: packaged convergence studies with artifact output
- cli: command-line entry points over all of the above
"""

__version__ = "0.1.0"
