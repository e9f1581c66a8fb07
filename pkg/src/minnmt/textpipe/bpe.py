"""Byte pair encoding: merge learning and application.

Words start as their characters followed by an end-of-word sentinel.  Each
learning round merges the most frequent adjacent symbol pair; equal counts
go to the lexicographically smallest pair.  Applying a model repeatedly
merges the present pair with the earliest learned rank.  Pieces other
than the last carry a continuation marker so the split is reversible.
"""

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..fileio import atomic_write

END_OF_WORD = "</w>"
CONTINUATION = "‧"
HEADER = "#minnmt-bpe v1"


class BpeFormatError(ValueError):
    pass


@dataclass
class BpeModel:
    merges: list = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def num_merges(self):
        return len(self.merges)

    def rank(self, pair):
        return self._ranks.get(pair)

    def dumps(self):
        lines = [HEADER] + [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = text.splitlines()
        if not lines or lines[0] != HEADER:
            raise BpeFormatError(f"missing BPE header {HEADER!r}")
        merges = []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise BpeFormatError(f"line {lineno}: expected 'left right', got {line!r}")
            merges.append(tuple(parts))
        return cls(merges)

    def save(self, path):
        atomic_write(path, self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())


def _merge_word(symbols, pair, joined):
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _pairs(symbols):
    return zip(symbols, symbols[1:])


def learn_bpe(tokens, num_merges):
    """Learn up to ``num_merges`` merges from an iterable of tokens.

    Pair counts are maintained incrementally: after each merge only the
    words containing the merged pair are recounted.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq = Counter(tokens)
    words = [tuple(w) + (END_OF_WORD,) for w in word_freq]
    freqs = list(word_freq.values())

    pair_counts = Counter()
    where = defaultdict(set)
    for idx, symbols in enumerate(words):
        for pair in _pairs(symbols):
            pair_counts[pair] += freqs[idx]
            where[pair].add(idx)

    merges = []
    while len(merges) < num_merges:
        best = None
        for pair, count in pair_counts.items():
            if count <= 0:
                continue
            if best is None or count > best[0] or (count == best[0] and pair < best[1]):
                best = (count, pair)
        if best is None:
            break
        pair = best[1]
        merges.append(pair)
        joined = pair[0] + pair[1]
        for idx in sorted(where.pop(pair, ())):
            old = words[idx]
            if pair not in set(_pairs(old)):
                continue
            for p in _pairs(old):
                pair_counts[p] -= freqs[idx]
            new = _merge_word(old, pair, joined)
            words[idx] = new
            for p in _pairs(new):
                pair_counts[p] += freqs[idx]
                where[p].add(idx)
        pair_counts.pop(pair, None)
    return BpeModel(merges)


def segment(model, word):
    """Split a word into merged symbols, sentinel included."""
    symbols = tuple(word) + (END_OF_WORD,)
    while len(symbols) > 1:
        best = None
        for pair in _pairs(symbols):
            r = model.rank(pair)
            if r is not None and (best is None or r < best[0]):
                best = (r, pair)
        if best is None:
            break
        pair = best[1]
        symbols = _merge_word(symbols, pair, pair[0] + pair[1])
    return symbols


def apply_bpe(model, token, marker=CONTINUATION):
    if not token:
        return []
    symbols = list(segment(model, token))
    last = symbols[-1]
    if last == END_OF_WORD:
        symbols.pop()
    else:
        symbols[-1] = last[:-len(END_OF_WORD)]
    return [s + marker for s in symbols[:-1]] + [symbols[-1]]


def apply_bpe_tokens(model, tokens, marker=CONTINUATION):
    out = []
    for tok in tokens:
        out.extend(apply_bpe(model, tok, marker))
    return out


def remove_bpe(pieces, marker=CONTINUATION):
    out = []
    buf = ""
    for piece in pieces:
        if piece.endswith(marker):
            buf += piece[:-len(marker)]
        else:
            out.append(buf + piece)
            buf = ""
    if buf:
        out.append(buf)
    return out
