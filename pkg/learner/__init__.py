"""Learner: policy improvement, optimistic evaluation and the episode loop.

- policy_opt: KL-regularized exponential-weights improvement
- policy_eval: ridge accumulation, UCB bonus, backward Q/V construction
- agent: episode orchestration across agent modes
- checkpoint: bit-exact JSON agent snapshots
"""
