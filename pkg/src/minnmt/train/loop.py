import math
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..model import bind, forward_nll
from ..tensor import Tape, identity_plan, plan_buffer_sharing, run_with_plan
from .optim import clip_and_step


class WorkerError(RuntimeError):
    def __init__(self, worker, exc):
        super().__init__(f"worker {worker} failed: {exc!r}")
        self.worker = worker


@dataclass
class TrainStats:
    epoch: int = 0
    tokens: int = 0
    nll: float = 0.0
    seconds: float = 0.0
    learning_rate: float = 0.0
    steps: int = 0

    @property
    def perplexity(self):
        return math.exp(self.nll / self.tokens) if self.tokens else float("nan")

    @property
    def tokens_per_second(self):
        return self.tokens / self.seconds if self.seconds > 0 else 0.0

    def to_dict(self):
        d = asdict(self)
        d["perplexity"] = self.perplexity
        d["tokens_per_second"] = self.tokens_per_second
        return d


@dataclass
class WorkerConfig:
    num_workers: int = 1
    mode: str = "sync"

    def __post_init__(self):
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.mode not in ("sync", "async"):
            raise ValueError("mode must be 'sync' or 'async'")


class GradientEngine:
    """Loss and gradients for one batch, run inside a shared buffer arena.

    Each batch is recorded on a deferred tape; sharing plans are cached by
    tape signature so batches of the same shape reuse one plan.
    """

    def __init__(self, cfg, share_buffers=True, cache_size=256):
        self.cfg = cfg
        self.share_buffers = share_buffers
        self.cache_size = cache_size
        self._plans = OrderedDict()
        self._lock = threading.Lock()
        self.last_stats = None

    def _plan(self, tape):
        sig = tape.signature()
        with self._lock:
            plan = self._plans.get(sig)
            if plan is not None:
                self._plans.move_to_end(sig)
                return plan
        plan = plan_buffer_sharing(tape) if self.share_buffers else identity_plan(tape)
        with self._lock:
            self._plans[sig] = plan
            while len(self._plans) > self.cache_size:
                self._plans.popitem(last=False)
        return plan

    def __call__(self, batch, params, rng=None):
        tape = Tape(eager=False)
        loss = forward_nll(batch, bind(params, tape), self.cfg, rng)
        tape.mark_loss(loss)
        tape.finalize()
        result = run_with_plan(tape, self._plan(tape))
        self.last_stats = result.stats
        return result.loss, result.grads


def dropout_rng(seed, epoch, batch_index, worker=0):
    return np.random.default_rng([seed, epoch, batch_index, worker])


def _rng(cfg, opt, b, worker=0):
    return dropout_rng(opt.seed, opt.epoch, b, worker) if cfg.dropout_rate > 0 else None


def train_epoch(batches, params, cfg, opt, engine=None):
    """One pass over ``batches`` with an SGD step per batch; updates ``params`` in place."""
    if not batches:
        raise ValueError("train_epoch needs at least one batch")
    engine = engine or GradientEngine(cfg)
    stats = TrainStats(epoch=opt.epoch, learning_rate=opt.learning_rate)
    start = time.perf_counter()
    for b, batch in enumerate(batches):
        loss, grads = engine(batch, params, _rng(cfg, opt, b))
        n = batch.num_target_tokens
        stats.tokens += n
        stats.nll += loss * n
        clip_and_step(params, grads, opt)
        stats.steps += 1
    stats.seconds = time.perf_counter() - start
    return stats


def split_rows(batch, k):
    """Contiguous, near-equal row shards for ``k`` workers (empty shards dropped)."""
    return [batch.rows(idx) for idx in np.array_split(np.arange(batch.size), k) if idx.size]


def _run(worker, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise WorkerError(worker, exc) from exc


def _sync_epoch(batches, params, cfg, opt, k, engine, pool):
    stats = TrainStats(epoch=opt.epoch, learning_rate=opt.learning_rate)
    for b, batch in enumerate(batches):
        shards = split_rows(batch, k)
        snapshot = {name: p.copy() for name, p in params.items()}
        futures = [pool.submit(_run, w, engine, shard, snapshot, _rng(cfg, opt, b, w))
                   for w, shard in enumerate(shards)]
        results = [f.result() for f in futures]
        total = batch.num_target_tokens
        grads = {}
        for shard, (loss, g) in zip(shards, results):
            weight = shard.num_target_tokens / total
            for name in sorted(g):
                contrib = g[name] * weight
                grads[name] = contrib if name not in grads else grads[name] + contrib
            stats.nll += loss * shard.num_target_tokens
        stats.tokens += total
        clip_and_step(params, grads, opt)
        stats.steps += 1
    return stats


def _async_epoch(batches, params, cfg, opt, k, engine, pool):
    stats = TrainStats(epoch=opt.epoch, learning_rate=opt.learning_rate)
    lock = threading.Lock()

    def work(w):
        for b in range(w, len(batches), k):
            with lock:
                snapshot = {name: p.copy() for name, p in params.items()}
            loss, grads = engine(batches[b], snapshot, _rng(cfg, opt, b, w))
            n = batches[b].num_target_tokens
            with lock:
                clip_and_step(params, grads, opt)
                stats.tokens += n
                stats.nll += loss * n
                stats.steps += 1

    futures = [pool.submit(_run, w, work, w) for w in range(k)]
    for f in futures:
        f.result()
    return stats


def train_parallel(batches, params, cfg, opt, workers=None, engine=None):
    """One epoch with ``workers.num_workers`` in-process workers; ``params`` update in place.

    sync: each batch is split across the workers, shard gradients are
    averaged weighted by target tokens (in worker order), one master step.
    async: workers take batches round-robin, compute on a snapshot of the
    master and apply their own step under a single lock.
    """
    if not batches:
        raise ValueError("train_parallel needs at least one batch")
    workers = workers or WorkerConfig()
    engine = engine or GradientEngine(cfg)
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=workers.num_workers) as pool:
        run = _sync_epoch if workers.mode == "sync" else _async_epoch
        stats = run(batches, params, cfg, opt, workers.num_workers, engine, pool)
    stats.seconds = time.perf_counter() - start
    return stats
