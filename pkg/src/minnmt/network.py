"""The encoder-decoder network, written once against an ops backend.

The training stack runs these functions over tape-recording tensor ops;
the deployment runtime runs them over bare numpy kernels.  Both backends
execute the same kernel sequence, which is what makes their outputs
bit-identical.  Nothing here imports the autodiff engine.

Parameter names::

    enc.emb, enc.feat{k}                 source word / factor embeddings
    enc.l{n}.W, .U, .b  (.Un for GRU)    encoder cell of layer n
    dec.emb, dec.feat{k}, dec.l{n}.*     decoder counterparts
    attn.W_a                             general-attention bilinear map
    attn.W_c                             [context; h_t] -> attentional hidden
    gen.W, gen.b, gen.feat{k}.W/.b       word and factor generator heads
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K

CELL_GATES = {"lstm": 4, "gru": 3}


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    num_layers: int = 2
    rnn_size: int = 500
    embedding_dim: int = 300
    cell_kind: str = "lstm"
    attention_kind: str = "dot"
    input_feed: bool = True
    dropout_rate: float = 0.0
    src_factors: list = field(default_factory=list)   # [(vocab size, embedding dim), ...]
    tgt_factors: list = field(default_factory=list)

    def __post_init__(self):
        self.src_factors = [tuple(int(v) for v in f) for f in self.src_factors]
        self.tgt_factors = [tuple(int(v) for v in f) for f in self.tgt_factors]
        self.validate()

    def validate(self):
        dims = [self.src_vocab_size, self.tgt_vocab_size, self.rnn_size, self.embedding_dim]
        dims += [d for f in self.src_factors + self.tgt_factors for d in f]
        if any(int(d) < 1 for d in dims):
            raise ValueError("all model dimensions must be positive")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.cell_kind not in CELL_GATES:
            raise ValueError(f"cell_kind must be one of {sorted(CELL_GATES)}")
        if self.attention_kind not in ("dot", "general"):
            raise ValueError("attention_kind must be 'dot' or 'general'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["src_factors"] = [list(f) for f in self.src_factors]
        d["tgt_factors"] = [list(f) for f in self.tgt_factors]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg):
    """Name -> shape for every parameter, in a fixed order."""
    H, E = cfg.rnn_size, cfg.embedding_dim
    G = CELL_GATES[cfg.cell_kind]
    shapes = {}
    for side, vocab, factors in (("enc", cfg.src_vocab_size, cfg.src_factors),
                                 ("dec", cfg.tgt_vocab_size, cfg.tgt_factors)):
        shapes[f"{side}.emb"] = (vocab, E)
        for k, (fv, fd) in enumerate(factors):
            shapes[f"{side}.feat{k}"] = (fv, fd)
        d_in = E + sum(fd for _, fd in factors)
        if side == "dec" and cfg.input_feed:
            d_in += H
        for n in range(cfg.num_layers):
            p = f"{side}.l{n}"
            shapes[f"{p}.W"] = (d_in if n == 0 else H, G * H)
            if cfg.cell_kind == "lstm":
                shapes[f"{p}.U"] = (H, 4 * H)
            else:
                shapes[f"{p}.U"] = (H, 2 * H)
                shapes[f"{p}.Un"] = (H, H)
            shapes[f"{p}.b"] = (G * H,)
    if cfg.attention_kind == "general":
        shapes["attn.W_a"] = (H, H)
    shapes["attn.W_c"] = (2 * H, H)
    shapes["gen.W"] = (H, cfg.tgt_vocab_size)
    shapes["gen.b"] = (cfg.tgt_vocab_size,)
    for k, (fv, _) in enumerate(cfg.tgt_factors):
        shapes[f"gen.feat{k}.W"] = (H, fv)
        shapes[f"gen.feat{k}.b"] = (fv,)
    return shapes


def init_params(cfg, seed=0, scale=0.1):
    """Uniform(-scale, scale) initialisation, drawn in ``param_shapes`` order."""
    rng = np.random.default_rng(seed)
    return {name: rng.uniform(-scale, scale, size=shape)
            for name, shape in param_shapes(cfg).items()}


class NumpyOps:
    """Forward-only backend over plain arrays (the deployment decoder)."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)

    def _out(self, shape):
        return np.empty(shape, dtype=self.dtype)

    def matmul(self, a, b):
        return K.matmul(a, b, self._out((a.shape[0], b.shape[1])))

    def add(self, a, b):
        return K.add(a, b, self._out(a.shape))

    def sub(self, a, b):
        return K.sub(a, b, self._out(a.shape))

    def mul(self, a, b):
        return K.mul(a, b, self._out(a.shape))

    def sigmoid(self, x):
        return K.sigmoid(x, self._out(x.shape))

    def tanh(self, x):
        return K.tanh(x, self._out(x.shape))

    def add_bias(self, x, b):
        return K.add_bias(x, b, self._out(x.shape))

    def concat(self, xs):
        lead = xs[0].shape[:-1]
        return K.concat(xs, self._out(lead + (sum(x.shape[-1] for x in xs),)))

    def slice(self, x, lo, hi):
        return K.column_slice(x, lo, hi, self._out(x.shape[:-1] + (hi - lo,)))

    def embedding(self, table, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise IndexError(f"embedding id out of range for table of {table.shape[0]} rows")
        return K.embedding(table, ids, self._out(ids.shape + (table.shape[1],)))

    def where(self, mask, a, b):
        return K.where(mask, a, b, self._out(a.shape))

    def log_softmax(self, x):
        return K.log_softmax_rows(x, self._out(x.shape))

    def softmax(self, x, mask):
        return K.masked_softmax_rows(x, mask, self._out(x.shape))

    def attention_scores(self, q, memory):
        return K.attention_scores(q, memory, self._out(memory.shape[:2]))

    def weighted_sum(self, w, memory):
        return K.weighted_sum(w, memory, self._out((memory.shape[0], memory.shape[2])))

    def stack(self, xs):
        return K.stack_steps(xs, self._out((xs[0].shape[0], len(xs), xs[0].shape[1])))

    def zeros(self, shape):
        return np.zeros(shape, dtype=self.dtype)

    def take_rows(self, x, idx):
        return x[idx]

    def array(self, x):
        return x

    def const(self, arr):
        return np.asarray(arr, dtype=self.dtype)


# ---------------------------------------------------------------- cells

def lstm_step(ops, x, h, c, W, U, b):
    """Gates in column order i, f, o, g."""
    H = h.shape[1]
    gates = ops.add_bias(ops.add(ops.matmul(x, W), ops.matmul(h, U)), b)
    i = ops.sigmoid(ops.slice(gates, 0, H))
    f = ops.sigmoid(ops.slice(gates, H, 2 * H))
    o = ops.sigmoid(ops.slice(gates, 2 * H, 3 * H))
    g = ops.tanh(ops.slice(gates, 3 * H, 4 * H))
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new


def gru_step(ops, x, h, W, U, Un, b):
    """Update gate z, reset gate r; candidate sees the reset-scaled state."""
    H = h.shape[1]
    xw = ops.add_bias(ops.matmul(x, W), b)
    zr = ops.sigmoid(ops.add(ops.slice(xw, 0, 2 * H), ops.matmul(h, U)))
    z = ops.slice(zr, 0, H)
    r = ops.slice(zr, H, 2 * H)
    cand = ops.tanh(ops.add(ops.slice(xw, 2 * H, 3 * H), ops.matmul(ops.mul(r, h), Un)))
    return ops.add(h, ops.mul(z, ops.sub(cand, h)))


def cell_step(ops, P, prefix, kind, x, state):
    if kind == "lstm":
        return lstm_step(ops, x, state[0], state[1], P[f"{prefix}.W"], P[f"{prefix}.U"], P[f"{prefix}.b"])
    return (gru_step(ops, x, state[0], P[f"{prefix}.W"], P[f"{prefix}.U"], P[f"{prefix}.Un"], P[f"{prefix}.b"]),)


def zero_state(ops, cfg, batch):
    n = 2 if cfg.cell_kind == "lstm" else 1
    return tuple(ops.zeros((batch, cfg.rnn_size)) for _ in range(n))


# ------------------------------------------------------------ encoder

def embed(ops, P, side, ids, feats=()):
    x = ops.embedding(P[f"{side}.emb"], ids)
    if feats:
        x = ops.concat([x] + [ops.embedding(P[f"{side}.feat{k}"], f) for k, f in enumerate(feats)])
    return x


def encode(ops, P, cfg, src, lengths, src_feats=(), dropout=None):
    """Run the stacked encoder over ``src`` [B, S].

    Returns (memory [B, S, H], mask [B, S], final states per layer).  Rows
    shorter than S stop updating their state after their last token, so
    the final state is the state at each row's own last position.
    """
    src = np.asarray(src)
    B, S = src.shape
    lengths = np.asarray(lengths)
    if lengths.min() < 1:
        raise ValueError("source sentences must be non-empty")
    mask = np.arange(S)[None, :] < lengths[:, None]
    inputs = [embed(ops, P, "enc", src[:, t], [f[:, t] for f in src_feats]) for t in range(S)]
    finals = []
    for n in range(cfg.num_layers):
        if n > 0 and dropout is not None:
            inputs = [dropout(x) for x in inputs]
        state = zero_state(ops, cfg, B)
        outputs = []
        for t in range(S):
            new = cell_step(ops, P, f"enc.l{n}", cfg.cell_kind, inputs[t], state)
            if mask[:, t].all():
                state = new
            else:
                m = mask[:, t:t + 1]
                state = tuple(ops.where(m, a, b) for a, b in zip(new, state))
            outputs.append(state[0])
        finals.append(state)
        inputs = outputs
    return ops.stack(inputs), mask, finals


# ------------------------------------------------------------ decoder

def initial_decoder_state(ops, cfg, finals):
    batch = finals[0][0].shape[0]
    feed = ops.zeros((batch, cfg.rnn_size)) if cfg.input_feed else None
    return (tuple(finals), feed)


def global_attention(ops, P, cfg, h_t, memory, mask):
    """Luong global attention; returns (context, weights, attentional hidden)."""
    query = h_t if cfg.attention_kind == "dot" else ops.matmul(h_t, P["attn.W_a"])
    weights = ops.softmax(ops.attention_scores(query, memory), mask)
    context = ops.weighted_sum(weights, memory)
    hhat = ops.tanh(ops.matmul(ops.concat([context, h_t]), P["attn.W_c"]))
    return context, weights, hhat


def generator(ops, P, cfg, hhat):
    words = ops.log_softmax(ops.add_bias(ops.matmul(hhat, P["gen.W"]), P["gen.b"]))
    feats = [ops.log_softmax(ops.add_bias(ops.matmul(hhat, P[f"gen.feat{k}.W"]), P[f"gen.feat{k}.b"]))
             for k in range(len(cfg.tgt_factors))]
    return words, feats


def decoder_step(ops, P, cfg, prev_ids, prev_feats, state, memory, mask, dropout=None):
    """One teacher-forced or free-running step; returns (hhat, weights, new state)."""
    layers, feed = state
    x = embed(ops, P, "dec", prev_ids, prev_feats)
    if cfg.input_feed:
        x = ops.concat([x, feed])
    new_layers = []
    for n in range(cfg.num_layers):
        if n > 0 and dropout is not None:
            x = dropout(x)
        new = cell_step(ops, P, f"dec.l{n}", cfg.cell_kind, x, layers[n])
        new_layers.append(new)
        x = new[0]
    _, weights, hhat = global_attention(ops, P, cfg, x, memory, mask)
    return hhat, weights, (tuple(new_layers), hhat if cfg.input_feed else None)


class Decoder:
    """Batched incremental decoding over any ops backend.

    This is the interface beam search and scoring drive: ``encode`` a list
    of source sentences once, then ``step`` any selection of hypothesis
    rows, each tagged with the sentence it belongs to.
    """

    def __init__(self, ops, params, cfg):
        self.ops = ops
        self.P = params
        self.cfg = cfg

    @property
    def tgt_vocab_size(self):
        return self.cfg.tgt_vocab_size

    @property
    def num_factors(self):
        return len(self.cfg.tgt_factors)

    def encode(self, srcs, src_feats=None):
        lengths = np.array([len(s) for s in srcs], dtype=np.int64)
        S = int(lengths.max())
        src = np.zeros((len(srcs), S), dtype=np.int64)
        for i, s in enumerate(srcs):
            src[i, :len(s)] = s
        feats = []
        if src_feats:
            for k in range(len(src_feats[0])):
                f = np.zeros((len(srcs), S), dtype=np.int64)
                for i, sf in enumerate(src_feats):
                    f[i, :len(sf[k])] = sf[k]
                feats.append(f)
        memory, mask, finals = encode(self.ops, self.P, self.cfg, src, lengths, feats)
        return {"memory": memory, "mask": mask,
                "state": initial_decoder_state(self.ops, self.cfg, finals)}

    def select(self, state, idx):
        ops = self.ops
        layers, feed = state
        layers = tuple(tuple(ops.take_rows(a, idx) for a in layer) for layer in layers)
        return (layers, None if feed is None else ops.take_rows(feed, idx))

    def step(self, enc, rows, prev_ids, prev_feats, state):
        """Advance hypotheses ``rows`` (sentence index per row) by one token.

        Returns (word log-probs [N, V], factor log-probs, new state) with
        log-probs as plain arrays.
        """
        ops = self.ops
        memory = ops.take_rows(enc["memory"], rows)
        mask = enc["mask"][rows]
        hhat, _, state = decoder_step(ops, self.P, self.cfg, np.asarray(prev_ids),
                                      [np.asarray(f) for f in prev_feats], state, memory, mask)
        words, feats = generator(ops, self.P, self.cfg, hhat)
        return ops.array(words), [ops.array(f) for f in feats], state
