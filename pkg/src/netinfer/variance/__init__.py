"""Variance formulas and estimators."""
