import math
import time
from dataclasses import dataclass

import numpy as np

from ..textpipe.vocab import BOS, EOS
from .beam import BeamConfig, beam_search_batch


@dataclass
class ThroughputStats:
    sentences: int = 0
    source_tokens: int = 0
    seconds: float = 0.0

    @property
    def tokens_per_second(self):
        return self.source_tokens / self.seconds if self.seconds > 0 else 0.0

    def to_dict(self):
        return {"sentences": self.sentences, "source_tokens": self.source_tokens,
                "seconds": self.seconds, "tokens_per_second": self.tokens_per_second}


def translate_batch(decoder, srcs, beam=None, batch_size=30, src_feats=None):
    """N-best lists for every source, in input order, plus throughput.

    Sources are bucketed by length so each batch shares one encoder pass
    over similarly sized inputs.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    beam = beam or BeamConfig()
    results = [None] * len(srcs)
    order = sorted(range(len(srcs)), key=lambda i: (len(srcs[i]), i))
    start = time.perf_counter()
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        feats = None if src_feats is None else [src_feats[i] for i in idx]
        for i, nbest in zip(idx, beam_search_batch(decoder, [srcs[i] for i in idx], beam, feats)):
            results[i] = nbest
    seconds = time.perf_counter() - start if srcs else 0.0
    stats = ThroughputStats(len(srcs), sum(len(s) for s in srcs), seconds)
    return results, stats


def score_pair(decoder, src, tgt, src_feats=None):
    """Teacher-forced log-probability of ``tgt`` (EOS appended) and its perplexity."""
    enc = decoder.encode([src], None if src_feats is None else [src_feats])
    state = enc["state"]
    rows = np.zeros(1, dtype=np.int64)
    nf = decoder.num_factors
    feats = [np.full(1, BOS, dtype=np.int64) for _ in range(nf)]
    prev = BOS
    logprob = 0.0
    targets = list(tgt) + [EOS]
    for y in targets:
        lp, _, state = decoder.step(enc, rows, np.array([prev]), feats, state)
        logprob += float(lp[0, y])
        prev = y
    return logprob, math.exp(-logprob / len(targets))
