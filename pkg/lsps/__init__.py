"""Large-scale propensity score engine for observational causal-effect estimation."""

__version__ = "0.3.0"
