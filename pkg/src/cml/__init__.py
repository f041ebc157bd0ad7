"""Coupled map lattices of piecewise linear expanding maps.

Modules: ``maps`` (interval maps), ``lattice`` (coupling and orbits),
``diagnostics`` (distances, regimes, exponents, escape times, densities),
``geometry`` (component forests in the plane), ``lemma_calc`` (closed-form
constants) and ``cli``.
"""
from __future__ import annotations

__version__ = "0.1.0"
