"""Quantum particle bound to a cosmic string with a cusp: momentum-space evolution
of the captured state and the tails it develops."""

__version__ = "0.1.0"
