"""Gaussian embedding heads and coalition-based Shapley reweighting for implicit-feedback recommenders."""

__version__ = "0.1.0"
