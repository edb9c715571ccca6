"""Distributed differentially private ATE estimation.

Clients privatize bounded outcomes with the Poisson-Binomial mechanism, a
simulated secure-aggregation layer reveals only group sums, and the analyst
turns those sums into point estimates and confidence intervals.
"""

__version__ = "0.1.0"
