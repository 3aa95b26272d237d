"""Adaptive POD-Greedy-(D)EIM model order reduction.

Building blocks for compact reduced-order models of parametric nonlinear
systems discretized with a semi-implicit time stepper, driven by a
primal-dual output error indicator.
"""

__version__ = "0.1.0"
