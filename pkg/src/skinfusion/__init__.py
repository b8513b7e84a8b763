"""Tactile-proprioceptive external torque estimation on a simulated geared arm."""

__version__ = "0.1.0"
