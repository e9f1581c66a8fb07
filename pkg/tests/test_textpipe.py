from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minnmt.textpipe import (
    BOS, EOS, JOINER, PAD, UNK, BpeModel, Example, Vocab, apply_bpe, apply_bpe_tokens, build_vocab,
    collate, detokenize, learn_bpe, load_embeddings, make_batches, normalize_ws, remove_bpe,
    save_embeddings, tokenize,
)
from minnmt.textpipe.bpe import BpeFormatError
from minnmt.textpipe.embeddings import EmbeddingFormatError, dumps_embeddings, escape_token, unescape_token

# -- tokenizer -----------------------------------------------------------------

def test_tokenize_examples():
    assert tokenize("abc") == ["abc"]
    assert tokenize("Hello, world!") == ["Hello", "￭,", "world", "￭!"]
    assert tokenize("") == []
    assert tokenize("a,b") == ["a", "￭,￭", "b"]
    assert tokenize("(x)") == ["(￭", "x", "￭)"]


def test_detokenize_examples():
    assert detokenize(["Hello", "￭,", "world", "￭!"]) == "Hello, world!"
    assert detokenize([]) == ""


MIXED = ("abcXYZ", "éüñçß", "абвгд", "αβγδ", "中文字", "日本語", "한국어", "مرحبا", "नमस्ते", "0123456789",
         ".,;:!?'\"", "()[]{}<>", "-_/\\|@#$%^&*+=~`", "€£¥©®°±§¶", "…–—«»„“”", "😀👍🏽✓")


def mixed_corpus(n, seed):
    rng = np.random.default_rng(seed)
    pools = "".join(MIXED) + "    \t"
    chars = list(pools)
    lines = []
    for _ in range(n):
        length = int(rng.integers(0, 60))
        lines.append("".join(chars[i] for i in rng.integers(0, len(chars), size=length)))
    return lines


def test_round_trip_on_mixed_script_corpus():
    for line in mixed_corpus(1000, 0):
        assert detokenize(tokenize(line)) == normalize_ws(line)


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters=JOINER)))
def test_round_trip_property(line):
    assert detokenize(tokenize(line)) == normalize_ws(line)


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters=JOINER)))
def test_tokens_contain_no_whitespace(line):
    for tok in tokenize(line):
        assert tok and tok.split() == [tok]

# -- BPE -----------------------------------------------------------------------

def oracle_learn_bpe(tokens, num_merges):
    """Plain re-count-everything BPE learner used as the reference."""
    freq = Counter(tokens)
    words = {w: list(w) + ["</w>"] for w in freq}
    merges = []
    for _ in range(num_merges):
        counts = Counter()
        for w, symbols in words.items():
            for i in range(len(symbols) - 1):
                counts[(symbols[i], symbols[i + 1])] += freq[w]
        if not counts:
            break
        top = max(counts.values())
        best = min(p for p, c in counts.items() if c == top)
        merges.append(best)
        for w, symbols in words.items():
            out, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[w] = out
    return merges


def random_words(n, seed, alphabet="abcdeflmnorst"):
    rng = np.random.default_rng(seed)
    return ["".join(rng.choice(list(alphabet), size=rng.integers(1, 8))) for _ in range(n)]


def test_first_merge_on_low_lower():
    model = learn_bpe(["low"] * 5 + ["lower"] * 2, 1)
    assert model.merges == [("l", "o")]
    assert oracle_learn_bpe(["low"] * 5 + ["lower"] * 2, 1) == [("l", "o")]


def test_zero_merges():
    model = learn_bpe(["hello"], 0)
    assert model.merges == []
    assert apply_bpe(model, "ab") == ["a‧", "b"]


def test_repeated_word_is_rebuilt_after_len_merges():
    model = learn_bpe(["word"] * 3, 10)
    assert len(model.merges) == 4
    assert apply_bpe(model, "word") == ["word"]
    assert apply_bpe(learn_bpe(["low"], 2), "low") == ["low"]


def test_unseen_word_falls_back_to_characters():
    model = learn_bpe(["aaaa"], 5)
    assert apply_bpe(model, "xyz") == ["x‧", "y‧", "z"]


@pytest.mark.parametrize("seed", range(10))
def test_learner_matches_oracle(seed):
    words = random_words(50, seed)
    assert learn_bpe(words, 30).merges == oracle_learn_bpe(words, 30)


@given(st.lists(st.text(alphabet="abcd", min_size=1, max_size=6), min_size=1, max_size=20), st.integers(0, 15))
def test_learner_matches_oracle_property(words, merges):
    assert learn_bpe(words, merges).merges == oracle_learn_bpe(words, merges)


@given(st.lists(st.text(alphabet="abcd", min_size=1, max_size=6), min_size=1, max_size=20), st.integers(0, 15))
def test_bpe_is_deterministic_and_reversible(words, merges):
    model = learn_bpe(words, merges)
    assert learn_bpe(words, merges) == model
    assert remove_bpe(apply_bpe_tokens(model, words)) == words


def test_bpe_file_round_trip(tmp_path):
    model = learn_bpe(random_words(50, 1), 20)
    path = tmp_path / "bpe.txt"
    model.save(path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "#minnmt-bpe v1"
    assert BpeModel.load(path) == model
    with pytest.raises(BpeFormatError):
        BpeModel.loads("a b\n")

# -- vocab ---------------------------------------------------------------------

def test_build_vocab_examples():
    v = build_vocab("a a b".split(), 10)
    assert (v.id("a"), v.id("b")) == (4, 5)
    v = build_vocab("b b a a".split(), 10)
    assert v.words == ["a", "b"]
    v = build_vocab("x y y z z z".split(), 5)
    assert v.words == ["z"]
    assert len(build_vocab([], 10)) == 4
    with pytest.raises(ValueError):
        build_vocab(["a"], 4)


def test_vocab_specials_and_file_round_trip(tmp_path):
    v = Vocab(["hello", "world"])
    assert v.itos[:4] == ["<pad>", "<unk>", "<s>", "</s>"]
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)
    assert v.encode(["world", "nope"]) == [5, UNK]
    assert v.decode([BOS, 4, 5, EOS, PAD]) == ["hello", "world"]
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text(encoding="utf-8") == "hello\nworld\n"
    assert Vocab.load(tmp_path / "v.txt") == v

# -- batching ------------------------------------------------------------------

def random_pairs(n, seed, vocab=12):
    rng = np.random.default_rng(seed)
    return [([int(t) for t in rng.integers(4, vocab, size=rng.integers(1, 9))],
             [int(t) for t in rng.integers(4, vocab, size=rng.integers(0, 9))]) for _ in range(n)]


def test_batch_sizes_and_padding():
    batches = make_batches([([4], [5]), ([4, 5], [6]), ([6], [7])], 2)
    assert sorted(b.size for b in batches) == [1, 2]
    same = make_batches([([4, 5], [6]), ([5, 6], [7]), ([6, 7], [4])], 3)
    assert same[0].src.shape == (3, 2)
    assert (same[0].src == PAD).sum() == 0


def test_make_batches_empty():
    assert make_batches([], 4) == []


def test_batch_targets_are_framed_and_masked():
    batch = collate([Example([4, 5], [6, 7, 8]), Example([4], [6])], [0, 1])
    assert batch.tgt[:, 0].tolist() == [BOS, BOS]
    assert batch.tgt[0].tolist() == [BOS, 6, 7, 8, EOS]
    assert batch.tgt[1].tolist() == [BOS, 6, EOS, PAD, PAD]
    assert batch.tgt_lengths.tolist() == [5, 3]
    assert batch.src_mask.tolist() == [[True, True], [True, False]]
    assert batch.num_target_tokens == 6


@given(st.integers(0, 10_000), st.integers(1, 9), st.integers(1, 40))
def test_epoch_completeness_and_determinism(seed, batch_size, n):
    pairs = random_pairs(n, seed)
    batches = make_batches(pairs, batch_size, shuffle_seed=seed)
    again = make_batches(pairs, batch_size, shuffle_seed=seed)
    seen = []
    for b, c in zip(batches, again):
        assert np.array_equal(b.src, c.src) and np.array_equal(b.tgt, c.tgt)
        assert b.size <= batch_size
        assert b.src.max() < 12 and b.tgt.max() < 12
        for row, idx in enumerate(b.indices):
            src = b.src[row, :b.src_lengths[row]].tolist()
            tgt = b.tgt[row, 1:b.tgt_lengths[row] - 1].tolist()
            assert (src, tgt) == pairs[idx]
            seen.append(int(idx))
    assert sorted(seen) == list(range(n))


def test_batches_are_bucketed_by_source_length():
    batches = make_batches(random_pairs(64, 3), 8, shuffle_seed=1)
    spans = sorted((int(b.src_lengths.min()), int(b.src_lengths.max())) for b in batches)
    for (_, hi), (lo, _) in zip(spans, spans[1:]):
        assert hi <= lo


def test_rows_sub_batch_is_retrimmed():
    batch = collate([Example([4, 5, 6], [7, 7, 7]), Example([4], [5])], [0, 1])
    sub = batch.rows([1])
    assert sub.src.tolist() == [[4]]
    assert sub.tgt.tolist() == [[BOS, 5, EOS]]

# -- embeddings ----------------------------------------------------------------

@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1))
def test_token_escape_round_trip(tok):
    escaped = escape_token(tok)
    assert not any(ch.isspace() for ch in escaped if ch in " \t\n\r")
    assert unescape_token(escaped) == tok


def test_embedding_round_trip_is_bitwise(tmp_path):
    vocab = Vocab(["a b", "tab\there", "back\\slash", "plain"])
    table = np.random.default_rng(0).normal(size=(len(vocab), 5))
    save_embeddings(tmp_path / "e.txt", vocab, table)
    header = (tmp_path / "e.txt").read_text(encoding="utf-8").splitlines()[0]
    assert header == f"{len(vocab)} 5"
    back = load_embeddings(tmp_path / "e.txt", vocab, 5)
    assert np.array_equal(back, table)


def test_embedding_missing_rows_use_seeded_init(tmp_path):
    (tmp_path / "e.txt").write_text("1 3\nother 1 2 3\n", encoding="utf-8")
    vocab = Vocab(["x", "y"])
    a = load_embeddings(tmp_path / "e.txt", vocab, 3, seed=5)
    b = load_embeddings(tmp_path / "e.txt", vocab, 3, seed=5)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 0.1)


def test_embedding_errors(tmp_path):
    vocab = Vocab(["x"])
    (tmp_path / "dim.txt").write_text("1 50\n" + "x " + " ".join(["0"] * 50) + "\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="dimension"):
        load_embeddings(tmp_path / "dim.txt", vocab, 300)
    (tmp_path / "bad.txt").write_text("2 2\nx 1 2\ny 1\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="line 3"):
        load_embeddings(tmp_path / "bad.txt", vocab, 2)
    with pytest.raises(ValueError):
        dumps_embeddings(vocab, np.zeros((2, 2)))
