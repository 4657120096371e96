"""Trivial demo services for desk-scale runs and tests."""
