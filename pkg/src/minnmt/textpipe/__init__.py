"""Tokenization, BPE, vocabularies, batching and embedding files."""

from .batching import Batch, Example, collate, make_batches
from .bpe import BpeModel, apply_bpe, apply_bpe_tokens, learn_bpe, remove_bpe
from .embeddings import load_embeddings, save_embeddings
from .tokenizer import JOINER, detokenize, normalize_ws, tokenize
from .vocab import BOS, EOS, PAD, SPECIALS, UNK, Vocab, build_vocab

__all__ = [
    "BOS", "Batch", "BpeModel", "EOS", "Example", "JOINER", "PAD", "SPECIALS", "UNK", "Vocab",
    "apply_bpe", "apply_bpe_tokens", "build_vocab", "collate", "detokenize", "learn_bpe",
    "load_embeddings", "make_batches", "normalize_ws", "remove_bpe", "save_embeddings", "tokenize",
]
