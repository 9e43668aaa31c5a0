"""Numerical tolerances used throughout the toolkit.

All state/measurement comparisons are relative: a quantity with norm w is
compared at tol * (1 + w) so that tests behave sensibly near zero.
"""

# Projection identities and basis rank checks (double precision, n <= 16).
EPS_LIN = 1e-8

# Relative singular-value cutoff for rank decisions.
EPS_RANK = 1e-8

# Relative tolerance for treating two reconstructed states as equal.
EPS_VOTE_REL = 1e-6

# Relative residual tolerance for accepting a least-squares reconstruction.
EPS_RES_REL = 1e-6

# Feasibility/stationarity tolerance of the least-deviation program.
EPS_QP = 1e-8
