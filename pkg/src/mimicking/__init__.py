"""Mimicking processes for Ito processes: projected coefficients, mimicking SDEs,
and exact finite-space versions of the discrete-time and concatenation constructions."""

__version__ = "0.1.0"
