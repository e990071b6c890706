"""CLI interface for msfilter."""
