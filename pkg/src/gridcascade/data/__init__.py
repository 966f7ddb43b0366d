"""Bundled case data."""
