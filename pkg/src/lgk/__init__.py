"""Landmark-guided knowledge navigation."""
