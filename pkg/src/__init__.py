"""
PairFair - pairwise fairness metrics and constrained training for ranking and regression
"""

__version__ = "0.1.0"
