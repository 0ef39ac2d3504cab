"""Experiment harness.

- schemas: experiment config and metrics report models
- optim: gradient descent, Adam and L-BFGS drivers
- scenarios: bimodal scenario, data sweeps and the restricted-optimum oracle
- experiment: the end-to-end runner
- checks: the invariant suite
- io: CSV and JSON export

Submodules are imported directly; the adversarial package depends on ``optim``.
"""
