TOOL_VERSION = "0.4.0"
CONFIG_SCHEMA = 1

# Laws / quadrature
ATOM_MASS_TOL = 1e-12
MOMENT_QUAD_EPSREL = 1e-10
MOMENT_QUAD_LIMIT = 200
JOINT_QUAD_NODES = 1000          # probability-midpoint nodes for (xi, eta) joint law

# Cascade / walks
MAX_ROUNDS_PER_BOX = 10**6
PATH_POINT_CAP = 10**8
BRW_BUDGET = 10**8
TIE_TOLERANCE = 1e-9             # positions within this of a threshold count as inside

# Grids
DEFAULT_STEP = 1e-3
DEFAULT_T_MAX = 50.0
SERIES_MASS_CUTOFF = 1e-12       # stop U series when next term carries less mass
SERIES_MAX_TERMS = 200_000
OVERFLOW_LIMIT = 1e300
COMMENSURABLE_TOL = 1e-9
TAIL_MARGIN = 28.0               # e^{-28} < 1e-12
EXPANSION_NOISE_FLOOR = 1e-6
ENVELOPE_TAIL_TOL = 1e-9
SUBADDITIVITY_MAX_NODES = 2000

# Tolerances for bound checks: 10 * h * slope-scale
BOUND_TOL_FACTOR = 10.0

# Limit law
LIMIT_STEP = 1e-3
LIMIT_HORIZON = 20.0
LIMIT_MIN_DECAY = 20.0

# Harness thresholds (relative to the limit variance 1/(2u))
CLT21_VARIANCE_BAND = (0.6, 1.6)
CLT32_VARIANCE_BAND = (0.75, 1.25)
CLT_MEAN_STDERRS = 4.0
CLT_CORRELATION_TOL = 0.03
KS_MIN_PVALUE = 0.01
WLLN_FINAL_MAX = 0.4
VARIANCE_Z_MAX = 4.0
GAP_RATIO_MAX = 5.0
VANISH_DIRECT_BUDGET = 2e5       # expected individuals per replicate for direct BRW Monte Carlo
LEMMA62_DISCREPANCY = 0.05
Y3_DOMINANCE_RATIO = 5.0         # Var Y3 over the larger of Var Y1, E Y2^2

# Acceptance suite, desk scale
ACCEPTANCE = {
    "renewal_oracle": {"h": 1e-3, "t_max": 50.0, "tol": 1e-4},
    "prop41": {"h": 1e-3, "t_max": 50.0, "j_max": 8},
    "expansion": {"h": 1e-3, "t_max": 50.0, "gamma_tol": 0.01, "ratio_tol": 0.15, "decay_tol": 0.05},
    "clt32": {"t": 200.0, "alpha": 0.4, "u": [0.5, 1.0], "replicates": 10_000, "h": 0.01},
    "vanish": {"t": [100.0, 200.0, 400.0], "alpha": 0.3, "replicates": 1000, "h": 0.02},
    "wlln": {"log_n": [8.0, 14.0, 20.0], "alpha": 0.4, "replicates": 200, "h": 1e-2},
    "clt21": {"log_n": 20.0, "alpha": 0.4, "u": [1.0], "replicates": 2000, "h": 1e-2},
    "variance": {"t": 8.0, "levels": [2, 3], "replicates": 100_000, "h": 1e-3},
    "gap": {"log_n": [10.0, 20.0, 30.0], "j": 3, "h": 1e-2},
    "small_instances": {"runs": 10**6, "max_balls": 4},
    "limit_law": {"u": [0.5, 1.0, 2.0], "paths": 100_000, "tol": 0.01},
}
ACCEPTANCE_SEED = 20240611
