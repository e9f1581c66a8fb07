"""Batched beam search over an incremental decoder.

The decoder is anything with the ``encode`` / ``select`` / ``step``
protocol of :class:`minnmt.network.Decoder`.  Sentences in one call share
the encoder pass; each keeps its own live and finished sets.
"""

from dataclasses import dataclass, field

import numpy as np

from ..textpipe.vocab import BOS, EOS, PAD

LENGTH_NORMS = ("none", "by_length")


@dataclass
class BeamConfig:
    beam_size: int = 5
    max_length: int | None = None  # None -> 2 * source length + 5
    n_best: int = 1
    length_norm: str = "none"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 1 <= self.n_best <= self.beam_size:
            raise ValueError("n_best must satisfy 1 <= n_best <= beam_size")
        if self.length_norm not in LENGTH_NORMS:
            raise ValueError(f"length_norm must be one of {LENGTH_NORMS}")
        if self.max_length is not None and self.max_length < 1:
            raise ValueError("max_length must be >= 1")

    def limit(self, src_len):
        return self.max_length if self.max_length is not None else 2 * src_len + 5


@dataclass
class Hypothesis:
    tokens: list            # target ids, ending in EOS once finished
    score: float            # sum of the chosen per-step log-probs
    feats: list = field(default_factory=list)  # per factor, one id per token
    finished: bool = False

    def ranking_score(self, length_norm="none"):
        if length_norm == "by_length":
            return self.score / len(self.tokens)
        return self.score


def _top_candidates(scores, k):
    """Flat indices of the best ``k`` finite entries of a [H, V] block.

    Ordered by descending score, then lower token id, then earlier
    hypothesis.  The rest of the finite entries come back as pruned.
    """
    H, V = scores.shape
    flat = scores.reshape(-1)
    cand = np.flatnonzero(flat > -np.inf)
    if cand.size > 4 * k:
        thr = np.partition(flat[cand], cand.size - k)[cand.size - k]
        cand = cand[flat[cand] >= thr]
    hyp, tok = np.divmod(cand, V)
    order = np.lexsort((hyp, tok, -flat[cand]))
    return cand[order[:k]], cand[order[k:]]


def beam_search_batch(decoder, srcs, beam=None, src_feats=None, trace=None):
    """Decode every sentence of ``srcs``; returns one n-best list per sentence.

    ``trace``, when a list, receives one record per sentence and step with
    the kept and pruned candidate scores.
    """
    beam = beam or BeamConfig()
    if any(len(s) == 0 for s in srcs):
        raise ValueError("beam search needs non-empty sources")
    B = len(srcs)
    if B == 0:
        return []
    nf = decoder.num_factors
    enc = decoder.encode(srcs, src_feats)
    limits = [beam.limit(len(s)) for s in srcs]

    # live hypotheses, flattened across sentences in sentence order
    rows = np.arange(B)
    tokens = [[] for _ in range(B)]
    feats = [[[] for _ in range(nf)] for _ in range(B)]
    scores = np.zeros(B)
    state = enc["state"]
    prev_ids = np.full(B, BOS, dtype=np.int64)
    prev_feats = [np.full(B, BOS, dtype=np.int64) for _ in range(nf)]
    finished = [[] for _ in range(B)]

    t = 0
    while rows.size:
        t += 1
        word_lp, feat_lps, state = decoder.step(enc, rows, prev_ids, prev_feats, state)
        step_lp = np.array(word_lp, dtype=np.float64)
        step_lp[:, PAD] = -np.inf
        step_lp[:, BOS] = -np.inf
        feat_ids = [np.argmax(f, axis=1) for f in feat_lps]
        if nf:
            bonus = np.zeros(rows.size)
            for f, ids in zip(feat_lps, feat_ids):
                bonus += np.asarray(f, dtype=np.float64)[np.arange(rows.size), ids]
            step_lp += bonus[:, None]
        cand_scores = scores[:, None] + step_lp

        parents, new_rows, new_tokens, new_feats, new_scores, next_ids = [], [], [], [], [], []
        start = 0
        while start < rows.size:
            b = rows[start]
            stop = start
            while stop < rows.size and rows[stop] == b:
                stop += 1
            block = cand_scores[start:stop]
            forced = t >= limits[b]
            if forced:
                eos_only = np.full_like(block, -np.inf)
                eos_only[:, EOS] = block[:, EOS]
                block = eos_only
            kept, pruned = _top_candidates(block, beam.beam_size)
            if forced and kept.size == 0:
                # a model with zero EOS mass still has to terminate
                kept = np.arange(stop - start) * block.shape[1] + EOS
            V = block.shape[1]
            if trace is not None:
                trace.append({"sentence": int(b), "step": t,
                              "kept": block.reshape(-1)[kept].copy(),
                              "pruned": block.reshape(-1)[pruned].copy()})
            for flat in kept:
                h, tok = divmod(int(flat), V)
                r = start + h
                toks = tokens[r] + [tok]
                fts = [feats[r][k] + [int(feat_ids[k][r])] for k in range(nf)]
                sc = scores[r] + step_lp[r, tok]
                if tok == EOS:
                    finished[b].append(Hypothesis(toks, float(sc), fts, True))
                else:
                    parents.append(r)
                    new_rows.append(b)
                    new_tokens.append(toks)
                    new_feats.append(fts)
                    new_scores.append(sc)
                    next_ids.append(tok)
            if _done(finished[b], new_scores, new_rows, b, beam):
                while new_rows and new_rows[-1] == b:
                    for lst in (parents, new_rows, new_tokens, new_feats, new_scores, next_ids):
                        lst.pop()
            start = stop

        rows = np.array(new_rows, dtype=np.int64)
        if not rows.size:
            break
        idx = np.array(parents, dtype=np.int64)
        state = decoder.select(state, idx)
        tokens, feats = new_tokens, new_feats
        scores = np.array(new_scores, dtype=np.float64)
        prev_ids = np.array(next_ids, dtype=np.int64)
        prev_feats = [np.array([f[k][-1] for f in new_feats], dtype=np.int64) for k in range(nf)]

    out = []
    for b in range(B):
        ranked = sorted(finished[b], key=lambda h: -h.ranking_score(beam.length_norm))
        out.append(ranked[:beam.n_best])
    return out


def _done(finished, new_scores, new_rows, b, beam):
    if len(finished) < beam.beam_size:
        return False
    if beam.length_norm != "none":
        return True
    live = [s for s, r in zip(new_scores, new_rows) if r == b]
    if not live:
        return True
    kth = sorted((h.score for h in finished), reverse=True)[beam.beam_size - 1]
    return kth >= max(live)


def beam_search(decoder, src, beam=None, src_feats=None, trace=None):
    """Ranked finished hypotheses for a single source sentence."""
    feats = None if src_feats is None else [src_feats]
    return beam_search_batch(decoder, [src], beam, feats, trace)[0]


def greedy_decode(decoder, src, max_length=None):
    """Argmax decoding; the reference for ``beam_size=1``."""
    enc = decoder.encode([src])
    state = enc["state"]
    limit = max_length if max_length is not None else 2 * len(src) + 5
    prev, out, score = BOS, [], 0.0
    nf = decoder.num_factors
    pf = [BOS] * nf
    for t in range(1, limit + 1):
        lp, flp, state = decoder.step(enc, np.array([0]), np.array([prev]),
                                      [np.array([p]) for p in pf], state)
        lp = np.array(lp[0], dtype=np.float64)
        lp[PAD] = lp[BOS] = -np.inf
        if t == limit:
            tok = EOS
        else:
            tok = int(np.argmax(lp))
        step = lp[tok]
        if nf:
            pf = [int(np.argmax(f[0])) for f in flp]
            step = step + sum(float(f[0][i]) for f, i in zip(flp, pf))
        score += step
        out.append(tok)
        prev = tok
        if tok == EOS:
            break
    return out, float(score)
