"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line; they are printed together at the
end of the pytest run (or directly when this file is run as a script).
"""

import math
import time

import numpy as np
import pytest

from minnmt.cli.modelfile import ModelFile, save_model
from minnmt.model import bind, forward_nll, stack_decoder
from minnmt.network import ModelConfig, init_params
from minnmt.tensor import Tape, backward, identity_plan, plan_buffer_sharing, run_with_plan
from minnmt.textpipe import Example, Vocab, collate, detokenize, learn_bpe, make_batches, normalize_ws, tokenize
from minnmt.train import GradientEngine, OptimState, WorkerConfig, train_epoch, train_parallel
from minnmt.translate import BeamConfig, beam_search, translate_batch
from minnmt.eval import bleu
from test_textpipe import mixed_corpus, oracle_learn_bpe, random_words
from toy import exhaustive_best, model_gradcheck, random_decoder, run_deployed_translate, tiny_config, train_copy

RESULTS = []


def record(number, title, ok, detail, seconds, limit):
    within = seconds < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"{status} criterion {number:>2}: {title} | {detail} | {seconds:.2f}s (limit {limit}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert within, line


@pytest.fixture(scope="module")
def copy_runs():
    runs = {}
    for seed in (1, 2, 3):
        start = time.perf_counter()
        params, cfg, history, test = train_copy(seed)
        runs[seed] = (params, cfg, history, test, time.perf_counter() - start)
    return runs


def test_1_gradient_check():
    start = time.perf_counter()
    cfg = tiny_config()
    params = init_params(cfg, seed=0)
    rng = np.random.default_rng(0)
    examples = [Example([int(t) for t in rng.integers(4, 7, size=3)], [int(t) for t in rng.integers(4, 7, size=3)])
                for _ in range(2)]
    errors = model_gradcheck(cfg, collate(examples, [0, 1]), params)
    worst = max(errors, key=errors.get)
    record(1, "tiny-model gradients vs central differences", errors[worst] < 1e-5,
           f"{len(errors)} parameter tensors, worst rel err {errors[worst]:.2e} ({worst})",
           time.perf_counter() - start, 10)


def test_2_beam_equals_exhaustive():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    agree = 0
    for seed in range(20):
        dec = random_decoder(seed)
        src = [int(t) for t in rng.integers(4, 7, size=rng.integers(1, 6))]
        tokens, _ = exhaustive_best(dec, src, 4)
        agree += beam_search(dec, src, BeamConfig(beam_size=625, max_length=4))[0].tokens == tokens
    record(2, "beam 625 equals exhaustive argmax", agree == 20, f"{agree}/20 models agree",
           time.perf_counter() - start, 30)


def test_3_buffer_sharing():
    start = time.perf_counter()
    cfg = ModelConfig(src_vocab_size=50, tgt_vocab_size=50, num_layers=2, rnn_size=32, embedding_dim=32)
    params = init_params(cfg, seed=0)
    rng = np.random.default_rng(0)
    batch = collate([Example([int(t) for t in rng.integers(4, 50, size=30)],
                             [int(t) for t in rng.integers(4, 50, size=29)]) for _ in range(4)], [0, 1, 2, 3])
    tape = Tape(eager=False)
    tape.mark_loss(forward_nll(batch, bind(params, tape), cfg))
    tape.finalize()
    shared = run_with_plan(tape, plan_buffer_sharing(tape))
    naive = run_with_plan(tape, identity_plan(tape))
    bitwise = shared.loss == naive.loss and all(np.array_equal(shared.grads[k], naive.grads[k]) for k in naive.grads)
    ratio = shared.stats.ratio
    record(3, "shared arena is bitwise exact and small", bitwise and ratio <= 0.6,
           f"bitwise={bitwise}, arena/naive={ratio:.3f} ({shared.stats.shared_bytes}/{shared.stats.naive_bytes} B)",
           time.perf_counter() - start, 30)


def test_4_sync_workers_match_serial():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    pairs = [([int(t) for t in rng.integers(4, 12, size=rng.integers(1, 7))],) * 2 for _ in range(320)]
    cfg = ModelConfig(src_vocab_size=12, tgt_vocab_size=12, num_layers=1, rnn_size=16, embedding_dim=8)
    batches = make_batches(pairs, 16, shuffle_seed=4)
    serial, parallel = init_params(cfg, seed=4), init_params(cfg, seed=4)
    train_epoch(batches, serial, cfg, OptimState(), GradientEngine(cfg))
    stats = train_parallel(batches, parallel, cfg, OptimState(), WorkerConfig(2, "sync"), GradientEngine(cfg))
    diff = max(float(np.max(np.abs(serial[k] - parallel[k]))) for k in serial)
    record(4, "K=2 sync equals serial", stats.steps == 20 and diff <= 1e-10,
           f"{stats.steps} steps, max |diff| {diff:.1e}", time.perf_counter() - start, 60)


def test_5_copy_task_convergence(copy_runs):
    ok = True
    details = []
    seconds = 0.0
    for seed, (params, cfg, history, test, train_time) in copy_runs.items():
        start = time.perf_counter()
        results, _ = translate_batch(stack_decoder(params, cfg), test, BeamConfig(beam_size=5))
        exact = sum(r[0].tokens[:-1] == src for r, src in zip(results, test)) / len(test)
        ppl = history[-1].perplexity
        ok &= ppl < 1.5 and exact >= 0.95
        seconds += train_time + time.perf_counter() - start
        details.append(f"seed {seed}: ppl {ppl:.3f}, exact {exact:.2f}")
    record(5, "copy task converges in 5 epochs", ok, "; ".join(details), seconds, 300)


def test_6_tokenizer_round_trip():
    start = time.perf_counter()
    lines = mixed_corpus(1000, 6)
    good = sum(detokenize(tokenize(line)) == normalize_ws(line) for line in lines)
    record(6, "tokenizer round trip on mixed scripts", good == 1000, f"{good}/1000 lines",
           time.perf_counter() - start, 5)


def test_7_bpe_oracle():
    start = time.perf_counter()
    words = random_words(50, 7)
    learned = learn_bpe(words, 30).merges
    oracle = oracle_learn_bpe(words, 30)
    record(7, "BPE learner equals brute-force oracle", learned == oracle,
           f"{len(learned)} merges, equal={learned == oracle}", time.perf_counter() - start, 5)


def test_8_batched_throughput(copy_runs):
    start = time.perf_counter()
    params, cfg, _, test, _ = copy_runs[1]
    dec = stack_decoder(params, cfg)
    one, s1 = translate_batch(dec, test, BeamConfig(beam_size=5), batch_size=1)
    many, s30 = translate_batch(dec, test, BeamConfig(beam_size=5), batch_size=30)
    same = all([(h.tokens, h.score) for h in a] == [(h.tokens, h.score) for h in b] for a, b in zip(one, many))
    speedup = s30.tokens_per_second / s1.tokens_per_second
    record(8, "batch 30 throughput over batch 1", same and speedup >= 2.0,
           f"{s1.tokens_per_second:.0f} -> {s30.tokens_per_second:.0f} tok/s ({speedup:.1f}x), identical={same}",
           time.perf_counter() - start, 60)


def test_9_deployment_path(copy_runs, tmp_path):
    start = time.perf_counter()
    params, cfg, _, test, _ = copy_runs[1]
    words = [f"w{i}" for i in range(4, cfg.src_vocab_size)]
    vocabs = {"src": Vocab(words), "tgt": Vocab(words)}
    save_model(tmp_path / "copy.mnmt", ModelFile(cfg, vocabs, params))
    lines = [" ".join(vocabs["src"].itos[t] for t in src) for src in test]
    (tmp_path / "in.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    code, modules, err = run_deployed_translate(["--model", str(tmp_path / "copy.mnmt"), "-i", str(tmp_path / "in.txt"),
                                                 "-o", str(tmp_path / "out.txt"), "--no-tokenize"])
    excluded = not [m for m in modules if m.startswith(("minnmt.tensor", "minnmt.model", "minnmt.train"))]
    results, _ = translate_batch(stack_decoder(params, cfg), test, BeamConfig(beam_size=5))
    expected = [detokenize(vocabs["tgt"].decode(r[0].tokens)) for r in results]
    got = (tmp_path / "out.txt").read_text(encoding="utf-8").splitlines() if code == 0 else []
    same = sum(a == b for a, b in zip(got, expected)) if len(got) == len(expected) else 0
    record(9, "deployment runtime equals full stack", code == 0 and excluded and same == len(test),
           f"{same}/{len(test)} identical, training modules loaded: {not excluded}",
           time.perf_counter() - start, 60)


def test_10_bleu_sanity():
    start = time.perf_counter()
    corpus = [tokenize(line) for line in ("the cat sat on the mat .", "a b", "x")]
    identity = bleu(corpus, corpus).bleu
    hand = bleu([["the", "the", "the"]], [["the", "cat"]])
    # clipped unigram matches 1 of 3, no bigram match, candidate longer than reference
    hand_ok = (round(hand.precisions[0], 4) == round(1 / 3, 4) and hand.precisions[1] == 0.0
               and round(hand.brevity_penalty, 4) == 1.0 and round(hand.bleu, 4) == 0.0)
    smooth = bleu([["the", "the", "the"]], [["the", "cat"]], smooth=True).bleu
    smooth_ok = round(smooth, 4) == round(100 * (2 / 4 * 1 / 3 * 1 / 2 * 1 / 1) ** 0.25, 4)
    record(10, "BLEU identity and hand example", identity == 100.0 and hand_ok and smooth_ok,
           f"BLEU(x,x)={identity}, p1={hand.precisions[0]:.4f}, BP={hand.brevity_penalty:.4f}, "
           f"smoothed={smooth:.4f}", time.perf_counter() - start, 1)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
