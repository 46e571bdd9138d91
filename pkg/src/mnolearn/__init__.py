"""Clipped separable multiple-neural-operator learning toolkit.

Subpackages by concern:

  * :mod:`mnolearn.relu_net`       constrained ReLU networks and projections
  * :mod:`mnolearn.mno`            the separable model, gradients, prescriber
  * :mod:`mnolearn.operator_zoo`   analytic ground-truth operator families
  * :mod:`mnolearn.sampling`       function samplers and dataset generation
  * :mod:`mnolearn.entropy_bounds` covering-number and risk-bound calculator
  * :mod:`mnolearn.harness`        training, evaluation, sweeps
  * :mod:`mnolearn.cli`            command-line entry points

The hot kernels live in a compiled extension when available; see
:mod:`mnolearn.backend`.
"""

from .backend import backend_name

__all__ = ["backend_name"]
__version__ = "0.1.0"
