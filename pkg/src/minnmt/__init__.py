"""minnmt: a desk-scale attention-based neural machine translation toolkit."""

__version__ = "0.1.0"
