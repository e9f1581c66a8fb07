"""Command-line entry points and on-disk formats."""
