"""Modeling, control, and simulation stack for a wheeled bipedal robot."""

__version__ = "0.1.0"
