"""Curvature quotient operator toolkit."""
