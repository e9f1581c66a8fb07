"""word2vec text-format import and export.

Tokens are escaped so that every line splits cleanly on single spaces:
backslash -> ``\\\\``, space -> ``\\s``, tab -> ``\\t``, newline -> ``\\n``.
Values are written with ``repr`` so 64-bit rows re-import bit for bit.
"""

import numpy as np

from ..fileio import atomic_write

_ESCAPES = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "s": " ", "t": "\t", "n": "\n", "r": "\r"}


class EmbeddingFormatError(ValueError):
    pass


def escape_token(tok):
    return "".join(_ESCAPES.get(ch, ch) for ch in tok)


def unescape_token(text):
    out = []
    chars = iter(text)
    for ch in chars:
        if ch == "\\":
            nxt = next(chars, None)
            if nxt not in _UNESCAPES:
                raise EmbeddingFormatError(f"bad escape in token {text!r}")
            out.append(_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def load_embeddings(path, vocab, dim, rng=None, seed=0):
    """Embedding matrix [|vocab|, dim] with rows copied from a word2vec text file.

    Rows for words the file does not cover keep their uniform(-0.1, 0.1)
    initialisation, drawn for the whole matrix up front from ``rng`` (or a
    generator seeded with ``seed``) so results do not depend on file order.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError("line 1: expected header 'V D'")
        try:
            count, file_dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError("line 1: header values must be integers") from None
        if file_dim != dim:
            raise EmbeddingFormatError(f"dimension mismatch: file has {file_dim}, requested {dim}")
        seen = 0
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected token and {dim} values, got {len(parts) - 1} values")
            tok = unescape_token(parts[0])
            try:
                row = [float(v) for v in parts[1:]]
            except ValueError:
                raise EmbeddingFormatError(f"line {lineno}: non-numeric value") from None
            seen += 1
            if tok in vocab:
                table[vocab.stoi[tok]] = row
        if seen != count:
            raise EmbeddingFormatError(f"header announces {count} rows, file has {seen}")
    return table


def dumps_embeddings(vocab, table):
    table = np.asarray(table)
    if table.shape[0] != len(vocab):
        raise ValueError(f"table has {table.shape[0]} rows for a vocabulary of {len(vocab)}")
    lines = [f"{table.shape[0]} {table.shape[1]}"]
    for tok, row in zip(vocab.itos, table):
        lines.append(" ".join([escape_token(tok)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def save_embeddings(path, vocab, table):
    atomic_write(path, dumps_embeddings(vocab, table))
