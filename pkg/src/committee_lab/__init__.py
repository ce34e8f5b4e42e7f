"""Simulation laboratory for verifier-backed committee search.

Proposers sample candidate actions, critics gate them, comparators run a
pairwise tournament among survivors, and the winner advances a ranked
valid-state system. Analytic bounds on the failure probability are checked
against Monte Carlo estimates and exact small-instance oracles.
"""

__version__ = "0.1.0"
