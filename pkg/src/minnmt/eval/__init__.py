"""Corpus BLEU and perplexity."""

from .metrics import BleuReport, bleu, corpus_perplexity

__all__ = ["BleuReport", "bleu", "corpus_perplexity"]
