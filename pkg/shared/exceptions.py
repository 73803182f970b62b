"""Custom exception hierarchy for OPPO-Lab.

All application-specific exceptions inherit from OppoLabError,
allowing callers to catch broad or narrow as needed.
"""


class OppoLabError(Exception):
    """Base exception for all OPPO-Lab errors."""


class InstanceError(OppoLabError):
    """Invalid linear MDP instance (non-stochastic rows, bad shapes)."""


class RewardError(OppoLabError):
    """Reward table with entries outside [0, 1] or wrong shape."""


class PolicyError(OppoLabError):
    """Malformed policy or divergence with unsupported mass."""


class AccumulatorError(OppoLabError):
    """Ridge accumulator corrupted beyond numerical tolerance."""


class ProtocolError(OppoLabError):
    """Episode ordering violated (wrong index, act-before-commit)."""


class GuardError(OppoLabError):
    """Brute-force enumeration requested beyond its size guard."""


class ConfigError(OppoLabError):
    """Invalid experiment configuration."""


class OracleResidualError(OppoLabError):
    """Regret decomposition identity broke beyond the abort tolerance."""


class ReportError(OppoLabError):
    """Run logs cannot be combined into one report."""
