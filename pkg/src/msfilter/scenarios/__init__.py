"""Bundled scenario configurations."""
