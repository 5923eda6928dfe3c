"""Numerical engine: penalized solvers, propensity strata, balance and effect estimates."""
