"""``minnmt`` command line.

Subcommands import what they need lazily; ``translate`` in particular
loads only the forward-only runtime, never the autodiff or training code.
Errors print one JSON object on stderr and exit nonzero.
"""

import argparse
import contextlib
import json
import os
import sys

from .. import __version__


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@contextlib.contextmanager
def _reader(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as f:
            yield f


@contextlib.contextmanager
def _writer(path):
    from ..fileio import atomic_open

    if path in (None, "-"):
        yield sys.stdout
    else:
        with atomic_open(path) as f:
            yield f


def _lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _to_tokens(line, tokenize_text, bpe):
    from ..textpipe import apply_bpe_tokens, normalize_ws, tokenize

    tokens = tokenize(line) if tokenize_text else normalize_ws(line).split()
    return apply_bpe_tokens(bpe, tokens) if bpe is not None else tokens


def _load_bpe(path):
    if not path:
        return None
    from ..textpipe import BpeModel

    return BpeModel.load(path)


# -- text tools ---------------------------------------------------------------

def cmd_tokenize(args):
    from ..textpipe import tokenize

    with _reader(args.input) as src, _writer(args.output) as out:
        for line in src:
            out.write(" ".join(tokenize(line.rstrip("\n"))) + "\n")


def cmd_detokenize(args):
    from ..textpipe import detokenize

    with _reader(args.input) as src, _writer(args.output) as out:
        for line in src:
            out.write(detokenize(line.split()) + "\n")


def cmd_learn_bpe(args):
    from ..textpipe import learn_bpe

    if args.merges < 0:
        raise ValueError("--merges must be >= 0")
    tokens = []
    with _reader(args.input) as src:
        for line in src:
            tokens.extend(line.split())
    learn_bpe(tokens, args.merges).save(args.output)


# -- preprocess ---------------------------------------------------------------

def cmd_preprocess(args):
    from ..textpipe import build_vocab
    from .dataset import save_dataset

    bpe = _load_bpe(args.bpe)
    tokenize_text = not args.no_tokenize

    def read_pairs(src_path, tgt_path):
        src_lines, tgt_lines = _lines(src_path), _lines(tgt_path)
        if len(src_lines) != len(tgt_lines):
            raise ValueError(f"line count mismatch: {src_path} has {len(src_lines)} lines, "
                             f"{tgt_path} has {len(tgt_lines)}")
        pairs = [(_to_tokens(s, tokenize_text, bpe), _to_tokens(t, tokenize_text, bpe))
                 for s, t in zip(src_lines, tgt_lines)]
        kept = [(s, t) for s, t in pairs if s and t]
        return kept, len(pairs) - len(kept)

    train, skipped = read_pairs(args.train_src, args.train_tgt)
    if not train:
        raise ValueError("no usable training pairs")
    src_vocab = build_vocab((t for s, _ in train for t in s), args.src_vocab_size)
    tgt_vocab = build_vocab((t for _, s in train for t in s), args.tgt_vocab_size)
    os.makedirs(args.save_dir, exist_ok=True)
    src_vocab.save(os.path.join(args.save_dir, "src.vocab"))
    tgt_vocab.save(os.path.join(args.save_dir, "tgt.vocab"))

    def encode(pairs):
        return [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]

    save_dataset(os.path.join(args.save_dir, "train.mnds"), encode(train))
    summary = {"pairs": len(train), "skipped": skipped,
               "src_vocab": len(src_vocab), "tgt_vocab": len(tgt_vocab)}
    if args.valid_src and args.valid_tgt:
        valid, _ = read_pairs(args.valid_src, args.valid_tgt)
        save_dataset(os.path.join(args.save_dir, "valid.mnds"), encode(valid))
        summary["valid_pairs"] = len(valid)
    print(json.dumps(summary, sort_keys=True))


# -- train --------------------------------------------------------------------

@contextlib.contextmanager
def _dir_lock(directory):
    import fcntl

    fd = os.open(os.path.join(directory, ".lock"), os.O_CREAT | os.O_RDWR, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise RuntimeError(f"{directory} is locked by another command") from None
        yield
    finally:
        os.close(fd)


def _checkpoint_path(directory, epoch):
    return os.path.join(directory, f"epoch-{epoch:03d}.mnmt")


def _latest_checkpoint(directory):
    found = sorted(n for n in os.listdir(directory) if n.startswith("epoch-") and n.endswith(".mnmt"))
    return os.path.join(directory, found[-1]) if found else None


def _read_stats(path, upto):
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as f:
        return [line for line in f if line.strip() and json.loads(line)["epoch"] <= upto]


def _valid_nll(batches, params, cfg):
    from ..model import forward_nll

    nll = tokens = 0
    for b in batches:
        n = b.num_target_tokens
        nll += float(forward_nll(b, params, cfg).data.reshape(-1)[0]) * n
        tokens += n
    return nll / tokens


def cmd_train(args):
    import math

    from ..fileio import atomic_write
    from ..network import ModelConfig, init_params
    from ..textpipe import Vocab, make_batches
    from ..train import GradientEngine, OptimState, WorkerConfig, checkpoint, restore, train_epoch, train_parallel
    from .dataset import load_dataset
    from .modelfile import ModelFile, save_model

    pairs = load_dataset(os.path.join(args.data, "train.mnds"))
    if not pairs:
        raise ValueError("training dataset is empty")
    valid_path = os.path.join(args.data, "valid.mnds")
    valid = load_dataset(valid_path) if os.path.exists(valid_path) else None
    vocabs = {"src": Vocab.load(os.path.join(args.data, "src.vocab")),
              "tgt": Vocab.load(os.path.join(args.data, "tgt.vocab"))}
    workers = WorkerConfig(args.workers, args.mode)
    os.makedirs(args.save_dir, exist_ok=True)

    with _dir_lock(args.save_dir):
        latest = _latest_checkpoint(args.save_dir) if args.resume else None
        if latest:
            state = restore(latest)
            params, cfg, opt = state.params, state.config, state.opt
        else:
            cfg = ModelConfig(
                src_vocab_size=len(vocabs["src"]), tgt_vocab_size=len(vocabs["tgt"]),
                num_layers=args.layers, rnn_size=args.rnn_size, embedding_dim=args.emb_size,
                cell_kind=args.cell, attention_kind=args.attention,
                input_feed=not args.no_input_feed, dropout_rate=args.dropout)
            params = init_params(cfg, seed=args.seed, scale=args.param_init)
            opt = OptimState(learning_rate=args.lr, decay_factor=args.decay,
                             decay_after_epoch=args.decay_after, decay_on_plateau=args.decay_on_plateau,
                             clip_norm=args.clip, seed=args.seed)
        manifest = dict(sorted(vars(args).items()))
        manifest.pop("func", None)
        manifest.update(version=__version__, model_config=cfg.to_dict(), resumed_from=latest)
        atomic_write(os.path.join(args.save_dir, "manifest.json"),
                     json.dumps(manifest, indent=2, sort_keys=True) + "\n")

        stats_path = os.path.join(args.save_dir, "stats.jsonl")
        log = _read_stats(stats_path, opt.epoch)
        engine = GradientEngine(cfg, share_buffers=not args.no_share_buffers)
        valid_batches = make_batches(valid, args.batch_size, 0) if valid else None
        while opt.epoch < args.epochs:
            batches = make_batches(pairs, args.batch_size, shuffle_seed=[opt.seed, opt.epoch])
            if workers.num_workers == 1 and workers.mode == "sync":
                stats = train_epoch(batches, params, cfg, opt, engine)
            else:
                stats = train_parallel(batches, params, cfg, opt, workers, engine)
            record = {"epoch": opt.epoch + 1, "perplexity": stats.perplexity,
                      "tokens_per_second": stats.tokens_per_second, "tokens": stats.tokens,
                      "nll": stats.nll, "seconds": stats.seconds, "learning_rate": stats.learning_rate}
            valid_loss = None
            if valid_batches:
                valid_loss = _valid_nll(valid_batches, params, cfg)
                record["valid_perplexity"] = math.exp(valid_loss)
            opt.end_epoch(valid_loss)
            checkpoint(_checkpoint_path(args.save_dir, opt.epoch), params, cfg, opt, vocabs)
            log.append(json.dumps(record, sort_keys=True) + "\n")
            atomic_write(stats_path, "".join(log))
            print(json.dumps(record, sort_keys=True), flush=True)
        save_model(os.path.join(args.save_dir, "model.mnmt"),
                   ModelFile(cfg, vocabs, params, None, args.precision))


# -- translate ----------------------------------------------------------------

def cmd_translate(args):
    from ..textpipe import detokenize, remove_bpe
    from ..translate import BeamConfig, load_for_inference, translate_batch

    model = load_for_inference(args.model, args.precision)
    src_vocab, tgt_vocab = model.vocabs["src"], model.vocabs["tgt"]
    bpe = _load_bpe(args.bpe)
    beam = BeamConfig(args.beam, args.max_length, args.n_best, args.length_norm)
    with _reader(args.input) as f:
        lines = [line.rstrip("\n") for line in f]
    encoded = [src_vocab.encode(_to_tokens(line, not args.no_tokenize, bpe)) for line in lines]
    keep = [i for i, ids in enumerate(encoded) if ids]
    results, stats = translate_batch(model, [encoded[i] for i in keep], beam, args.batch_size)
    nbest = [[] for _ in lines]
    for i, res in zip(keep, results):
        nbest[i] = res

    def render(hyp):
        tokens = tgt_vocab.decode(hyp.tokens)
        if bpe is not None:
            tokens = remove_bpe(tokens)
        return " ".join(tokens) if args.keep_tokenized else detokenize(tokens)

    with _writer(args.output) as out:
        for i, hyps in enumerate(nbest):
            if args.n_best == 1:
                out.write((render(hyps[0]) if hyps else "") + "\n")
            else:
                for h in hyps:
                    out.write(f"{i} ||| {render(h)} ||| {h.score!r}\n")
    print(json.dumps(stats.to_dict(), sort_keys=True), file=sys.stderr)


# -- embeddings and evaluation ------------------------------------------------

def cmd_export_embeddings(args):
    from ..textpipe import save_embeddings
    from .modelfile import load_model

    if args.side not in ("src", "tgt"):
        raise ValueError(f"--side must be 'src' or 'tgt', got {args.side!r}")
    mf = load_model(args.model)
    table = mf.params["enc.emb" if args.side == "src" else "dec.emb"]
    save_embeddings(args.output, mf.vocabs[args.side], table)


def cmd_eval_bleu(args):
    from ..eval import bleu

    cands = [line.split() for line in _lines(args.candidates)]
    refs = [line.split() for line in _lines(args.references)]
    print(json.dumps(bleu(cands, refs, smooth=args.smooth).to_dict(), sort_keys=True))


# -- parser -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="minnmt", description="Attention-based neural machine translation.")
    p.add_argument("--version", action="version", version=f"minnmt {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("tokenize", help="reversible tokenization, one sentence per line")
    s.add_argument("-i", "--input")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("detokenize", help="undo tokenize")
    s.add_argument("-i", "--input")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_detokenize)

    s = sub.add_parser("learn-bpe", help="learn BPE merges from tokenized text")
    s.add_argument("-i", "--input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--merges", type=int, default=10000)
    s.set_defaults(func=cmd_learn_bpe)

    s = sub.add_parser("preprocess", help="build vocabularies and a binarized dataset")
    s.add_argument("--train-src", required=True)
    s.add_argument("--train-tgt", required=True)
    s.add_argument("--valid-src")
    s.add_argument("--valid-tgt")
    s.add_argument("--save-dir", required=True)
    s.add_argument("--src-vocab-size", type=int, default=50000)
    s.add_argument("--tgt-vocab-size", type=int, default=50000)
    s.add_argument("--bpe", help="BPE model applied after tokenization")
    s.add_argument("--no-tokenize", action="store_true", help="input is already tokenized")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model on a preprocessed dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--save-dir", required=True)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--rnn-size", type=int, default=500)
    s.add_argument("--emb-size", type=int, default=300)
    s.add_argument("--cell", choices=("lstm", "gru"), default="lstm")
    s.add_argument("--attention", choices=("dot", "general"), default="dot")
    s.add_argument("--no-input-feed", action="store_true")
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--param-init", type=float, default=0.1)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--epochs", type=int, default=13)
    s.add_argument("--lr", type=float, default=1.0)
    s.add_argument("--decay", type=float, default=0.5)
    s.add_argument("--decay-after", type=int)
    s.add_argument("--decay-on-plateau", action="store_true")
    s.add_argument("--clip", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--mode", choices=("sync", "async"), default="sync")
    s.add_argument("--precision", type=int, choices=(32, 64), default=64)
    s.add_argument("--no-share-buffers", action="store_true")
    s.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="beam-search translation with the deployment runtime")
    s.add_argument("--model", required=True)
    s.add_argument("-i", "--input")
    s.add_argument("-o", "--output")
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--batch-size", type=int, default=30)
    s.add_argument("--n-best", type=int, default=1)
    s.add_argument("--max-length", type=int)
    s.add_argument("--length-norm", choices=("none", "by_length"), default="none")
    s.add_argument("--precision", type=int, choices=(32, 64))
    s.add_argument("--bpe")
    s.add_argument("--no-tokenize", action="store_true")
    s.add_argument("--keep-tokenized", action="store_true")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("export-embeddings", help="write an embedding table in word2vec text format")
    s.add_argument("--model", required=True)
    s.add_argument("--side", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("eval-bleu", help="corpus BLEU of tokenized candidates against references")
    s.add_argument("--candidates", required=True)
    s.add_argument("--references", required=True)
    s.add_argument("--smooth", action="store_true")
    s.set_defaults(func=cmd_eval_bleu)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
