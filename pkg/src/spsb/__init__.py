"""Backpropagation through simulated quantum circuits with simultaneous-perturbation
(SPSB) and parameter-shift Jacobians."""

__version__ = "0.1.0"
