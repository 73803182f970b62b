"""Shared constants for OPPO-Lab: enum lists, tolerances, output columns."""

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()


# --- Enumerations (used by config validation and the CLI) ---

class AgentMode(StrEnum):
    OPPO = "oppo"
    GREEDY_LSVI = "greedy_lsvi"
    NO_BONUS = "no_bonus"
    UNIFORM = "uniform"
    IDEAL_OPPO = "ideal_oppo"


# Stable per-mode stream codes. Never reorder: seeds derive from these.
MODE_STREAM_CODES = {
    AgentMode.OPPO: 0,
    AgentMode.GREEDY_LSVI: 1,
    AgentMode.NO_BONUS: 2,
    AgentMode.UNIFORM: 3,
    AgentMode.IDEAL_OPPO: 4,
}

ADVERSARY_KINDS = ["fixed", "periodic_switch", "adaptive_avoid"]

INSTANCE_KINDS = ["tabular-random", "combination-lock", "linear-mixture"]

FEATURE_KINDS = ["tabular", "mixture", "explicit"]

NAMED_REWARDS = ["random", "zeros", "ones", "lock"]

# --- Numerical tolerances ---

STOCHASTIC_TOL = 1e-9        # |row sum - 1| allowed for a transition row
NONNEGATIVE_TOL = 1e-12      # negative mass clamped to 0 below this
THETA_NORM_TOL = 1e-9        # slack on ||theta_h|| <= sqrt(d)
BONUS_RADICAND_TOL = 1e-12   # phi' Lambda^-1 phi may dip this far below 0
OPTIMISM_TOL = 1e-9          # iota above this counts as an optimism violation
ORACLE_ABORT_RESIDUAL = 1e-4  # decomposition residual that aborts a run
DECOMPOSITION_TOL = 1e-6     # residual reported as a failure in the suite

# --- Guards ---

BRUTE_FORCE_MAX_PATHS = 10**6

# Logit gap used for deterministic policies; exp(-1e4) underflows to exactly 0.
DETERMINISTIC_LOGIT_GAP = 1e4

# --- Report layout ---

CSV_COLUMNS = [
    "mode", "seed", "k", "inst_regret", "cum_regret",
    "term_i", "term_ii", "term_iii", "bonus_sum", "optimism_violations",
]

REPORT_CHECKPOINTS = [100, 500, 1000]

THREADS_ENV_VAR = "OPPO_LAB_THREADS"
