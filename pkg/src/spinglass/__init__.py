"""Numerical laboratory for mean-field spin glasses.

Finite-size ground truth (exact enumeration, Monte Carlo, Gibbs
sampling) on one side; the infinite-size Parisi / Hamilton-Jacobi
machinery (Parisi PDE, k-step minimization, Hopf-Lax, characteristics)
on the other; and cross-checks tying the two together.
"""

__version__ = "0.1.0"
