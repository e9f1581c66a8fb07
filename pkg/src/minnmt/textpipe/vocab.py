from collections import Counter

from ..fileio import atomic_write

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")


class Vocab:
    """Token <-> id map with four reserved ids (pad, unk, bos, eos)."""

    def __init__(self, tokens=()):
        self.itos = list(SPECIALS)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __repr__(self):
        return f"Vocab(size={len(self)})"

    @property
    def words(self):
        return self.itos[len(SPECIALS):]

    def id(self, tok):
        return self.stoi.get(tok, UNK)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids, strip_specials=True):
        out = []
        for i in ids:
            if strip_specials and i in (PAD, BOS, EOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path):
        """One token per line; the token on line n (1-based) has id n + 3."""
        atomic_write(path, "".join(tok + "\n" for tok in self.words))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f)


def build_vocab(tokens, max_size):
    """Most frequent tokens first, ties broken lexicographically, specials included in ``max_size``."""
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed {len(SPECIALS)} to leave room for specials")
    counts = Counter(t for t in tokens if t not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = max_size - len(SPECIALS)
    return Vocab(tok for tok, _ in ranked[:keep])
