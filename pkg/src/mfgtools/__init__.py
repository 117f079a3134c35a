"""Finite-state mean field games toolkit.

Subpackages/modules:

* ``core`` — domain types, scenario files, validation, equilibrium checks
* ``dynamics`` — revision protocols and forward-equation integrators
* ``bsk`` — discrete-time backward/forward equilibrium solver (risk-neutral
  and risk-sensitive)
* ``hjb`` — continuous-time backward/forward solver, exploitability, and the
  simplex-grid control DP
* ``nplayer`` — finite-population Monte Carlo harness and studies
* ``mkv`` — 1-D interacting-particle scheme and Wasserstein-1 metrics
* ``cli`` — reproducible command-line front end
"""

__version__ = "0.1.0"
