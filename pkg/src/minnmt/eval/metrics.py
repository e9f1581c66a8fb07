import math
from collections import Counter
from dataclasses import asdict, dataclass


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    candidate_length: int
    reference_length: int
    matches: list
    totals: list

    def to_dict(self):
        return asdict(self)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4, smooth=False):
    """Corpus BLEU over tokenized sentences, reported as a percentage.

    Counts are clipped per sentence and pooled over the corpus.  With
    ``smooth`` every n-gram order gets add-one counts.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates for {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            c_counts = _ngrams(cand, n)
            r_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if smooth:
        precisions = [(m + 1) / (t + 1) for m, t in zip(matches, totals)]
    else:
        precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if c_len == 0:
        bp = 0.0
    else:
        bp = min(1.0, math.exp(1.0 - r_len / c_len))
    if min(precisions) > 0:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        score = 0.0
    if matches == totals and c_len == r_len and c_len > 0:
        score = 100.0  # identical corpora, even when some order has no n-grams
    return BleuReport(score, precisions, bp, c_len, r_len, matches, totals)


def corpus_perplexity(decoder, pairs, src_feats=None):
    """exp(total NLL / total target tokens), each target counted with its EOS."""
    from ..translate.batch import score_pair

    if not pairs:
        raise ValueError("corpus_perplexity needs at least one pair")
    nll = 0.0
    tokens = 0
    for i, (src, tgt) in enumerate(pairs):
        lp, _ = score_pair(decoder, src, tgt, None if src_feats is None else src_feats[i])
        nll -= lp
        tokens += len(tgt) + 1
    return math.exp(nll / tokens)
