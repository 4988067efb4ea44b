"""QUBO encodings, simulated annealing and LP baselines for collateral optimization."""

__version__ = "0.1.0"
