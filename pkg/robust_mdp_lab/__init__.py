"""Robust MDP Lab - robust Bellman operators, uncertainty-set models, SSP checks and brute-force oracles"""

__version__ = "0.3.0"
