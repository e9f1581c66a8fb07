"""Beam search, batched translation and the forward-only runtime."""

from .batch import ThroughputStats, score_pair, translate_batch
from .beam import BeamConfig, Hypothesis, beam_search, beam_search_batch, greedy_decode
from .runtime import InferenceModel, load_for_inference

__all__ = [
    "BeamConfig", "Hypothesis", "InferenceModel", "ThroughputStats", "beam_search",
    "beam_search_batch", "greedy_decode", "load_for_inference", "score_pair", "translate_batch",
]
