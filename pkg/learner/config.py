"""Learner configuration constants.

Ridge regression defaults, bonus scaling, step-size policy and the
maintenance schedule of the incremental Gram inverse.
"""

# --- Ridge regression ---
RIDGE_LAMBDA = 1.0            # lambda in Lambda = sum phi phi' + lambda I
REFACTOR_EVERY = 256          # Rank-one updates between full re-factorizations
DRIFT_CHECK_EVERY = 16        # Updates between ||Lambda Lambda^-1 - I|| checks
INVERSE_DRIFT_TOL = 1e-8      # Max entrywise drift before forced re-factorization

# --- Exploration bonus ---
C_BETA_DEFAULT = 1.0          # beta = c_beta * sqrt(d H^2 log(d T / zeta))
ZETA_DEFAULT = 0.05           # Confidence level, free in (0, 1]
C_BETA_SWEEP = [0.1, 1.0, 10.0]  # Default grid of `oppo-lab sweep`

# --- Policy improvement ---
ALPHA_AUTO = "auto"           # sqrt(2 log|A| / (H T)) with T = H K

# --- Policy evaluation ---
LAZY_FEATURES_DEFAULT = False  # True: phi computed per (x, a) on demand
