import numpy as np

from .. import network as net
from .. import tensor as T
from ..tensor import Tensor


class TensorOps:
    """Backend that records onto a tape when its inputs live on one."""

    dtype = np.dtype(np.float64)

    matmul = staticmethod(T.matmul)
    add = staticmethod(T.add)
    sub = staticmethod(T.sub)
    mul = staticmethod(T.mul)
    sigmoid = staticmethod(T.sigmoid)
    tanh = staticmethod(T.tanh)
    add_bias = staticmethod(T.add_bias)
    concat = staticmethod(T.concat)
    slice = staticmethod(T.column_slice)
    embedding = staticmethod(T.embedding)
    where = staticmethod(T.where)
    log_softmax = staticmethod(T.log_softmax)
    softmax = staticmethod(T.softmax)
    attention_scores = staticmethod(T.attention_scores)
    weighted_sum = staticmethod(T.weighted_sum)
    stack = staticmethod(T.stack)

    @staticmethod
    def zeros(shape):
        return Tensor(np.zeros(shape))

    @staticmethod
    def take_rows(x, idx):
        return Tensor(x.data[idx])

    @staticmethod
    def array(x):
        return x.data

    @staticmethod
    def const(arr):
        return Tensor(np.asarray(arr, dtype=np.float64))


OPS = TensorOps()


def bind(params, tape=None):
    """Wrap a name -> array dict as tensors (tape leaves when ``tape`` is given)."""
    if tape is None:
        return {name: Tensor(arr, name=name) for name, arr in params.items()}
    return {name: tape.leaf(arr, name=name) for name, arr in params.items()}


def _tensors(P):
    return {k: v if isinstance(v, Tensor) else Tensor(v, name=k) for k, v in P.items()}


def lstm_step(x, state, W, U, b):
    return net.lstm_step(OPS, x, state[0], state[1], W, U, b)


def gru_step(x, h, W, U, Un, b):
    return net.gru_step(OPS, x, h, W, U, Un, b)


def encode(batch, P, cfg, dropout=None):
    return net.encode(OPS, _tensors(P), cfg, batch.src, batch.src_lengths, batch.src_feats, dropout)


def global_attention(h_t, memory, mask, P, cfg):
    return net.global_attention(OPS, _tensors(P), cfg, h_t, memory, mask)


def decode_step(prev_ids, state, enc, P, cfg, prev_feats=()):
    """One decoder step; returns (word log-probs, factor log-probs, new state)."""
    P = _tensors(P)
    memory, mask, _ = enc
    hhat, _, state = net.decoder_step(OPS, P, cfg, prev_ids, prev_feats, state, memory, mask)
    words, feats = net.generator(OPS, P, cfg, hhat)
    return words, feats, state


def generator_factored(hhat, P, cfg):
    return net.generator(OPS, _tensors(P), cfg, hhat)


def _dropout_fn(cfg, rng):
    if rng is None or cfg.dropout_rate <= 0.0:
        return None
    return lambda x: T.dropout(x, cfg.dropout_rate, rng)


def forward_nll(batch, P, cfg, rng=None):
    """Token-normalised teacher-forced negative log-likelihood (scalar tensor).

    Factor heads add their own NLL over the same positions.  Pass ``rng``
    to enable dropout (training); leave it ``None`` for evaluation.
    """
    P = _tensors(P)
    dropout = _dropout_fn(cfg, rng)
    memory, mask, finals = net.encode(OPS, P, cfg, batch.src, batch.src_lengths, batch.src_feats, dropout)
    state = net.initial_decoder_state(OPS, cfg, finals)
    tgt = batch.tgt
    terms = []
    for t in range(tgt.shape[1] - 1):
        weights = (t + 1 < batch.tgt_lengths).astype(np.float64)
        prev_feats = [f[:, t] for f in batch.tgt_feats]
        hhat, _, state = net.decoder_step(OPS, P, cfg, tgt[:, t], prev_feats, state, memory, mask, dropout)
        words, feats = net.generator(OPS, P, cfg, hhat)
        terms.append(T.nll_pick(words, tgt[:, t + 1], weights))
        for k, lp in enumerate(feats):
            terms.append(T.nll_pick(lp, batch.tgt_feats[k][:, t + 1], weights))
    total = terms[0] if len(terms) == 1 else T.add_n(terms)
    return T.scale(total, 1.0 / batch.num_target_tokens)


def stack_decoder(params, cfg):
    """Incremental decoder running on the training stack (eager tensors, no tape)."""
    return net.Decoder(OPS, bind(params), cfg)
