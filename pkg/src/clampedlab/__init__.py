"""Numerical laboratory for clamped fourth-order divergence-form eigenproblems."""
__version__ = "0.1.0"
