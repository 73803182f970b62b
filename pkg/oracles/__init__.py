"""Exact ground-truth computations using the true transitions.

Nothing in this package is visible to the agent; it powers regret
measurement and the lemma-level checks.
"""
