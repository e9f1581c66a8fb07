"""Reversible, language-independent tokenization.

Characters are classed by Unicode general category: letters, marks and
numbers are word characters, everything else (punctuation, symbols,
controls) is split off one character per token.  A joiner marker is
attached on each side of a token where the original text had no space,
which makes detokenization a deterministic string operation.

No Unicode normalization is performed.  Runs of whitespace are collapsed
to one space and leading/trailing whitespace is dropped, so round trips
hold modulo :func:`normalize_ws`.  Input text containing the joiner
character itself is not supported.
"""

import unicodedata

JOINER = "￭"


def normalize_ws(line):
    return " ".join(line.split())


def _is_word_char(ch):
    return unicodedata.category(ch)[0] in "LMN"


def tokenize(line, joiner=JOINER):
    tokens = []
    for chunk in line.split():
        pieces = []
        word = []
        for ch in chunk:
            if _is_word_char(ch):
                word.append(ch)
            else:
                if word:
                    pieces.append(("w", "".join(word)))
                    word = []
                pieces.append(("p", ch))
        if word:
            pieces.append(("w", "".join(word)))
        for i, (kind, text) in enumerate(pieces):
            if kind == "p":
                if i > 0:
                    text = joiner + text
                if i + 1 < len(pieces) and pieces[i + 1][0] == "w":
                    text = text + joiner
            tokens.append(text)
    return tokens


def detokenize(tokens, joiner=JOINER):
    out = []
    glue_next = False
    for i, tok in enumerate(tokens):
        glue = glue_next or tok.startswith(joiner)
        glue_next = False
        if tok.startswith(joiner):
            tok = tok[len(joiner):]
        if tok.endswith(joiner) and tok:
            tok = tok[:-len(joiner)]
            glue_next = True
        if i > 0 and not glue:
            out.append(" ")
        out.append(tok)
    return "".join(out)
