"""Numerical and seeding helpers shared by the engine modules."""
