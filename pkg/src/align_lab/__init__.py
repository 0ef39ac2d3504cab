"""align-lab - an exactly-verifiable laboratory for divergence-minimization alignment.

Autoregressive token policies are trained against Boltzmann-optimal expert
policies whose distributions are known by enumeration, so every objective
(SFT, forward/reverse KL, JS, f-divergence adversarial, Bradley-Terry) can be
checked against ground truth.
"""

__version__ = "0.1.0"
