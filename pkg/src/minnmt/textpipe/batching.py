from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS, PAD


@dataclass
class Example:
    src: list
    tgt: list
    src_feats: list = field(default_factory=list)   # one id list per source factor
    tgt_feats: list = field(default_factory=list)


@dataclass
class Batch:
    src: np.ndarray            # [B, S] source ids, PAD beyond each length
    tgt: np.ndarray            # [B, T] <s> w_1 .. w_n </s>, PAD beyond
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray    # includes <s> and </s>
    indices: np.ndarray        # position of each row in the input list
    src_feats: list = field(default_factory=list)
    tgt_feats: list = field(default_factory=list)

    @property
    def size(self):
        return self.src.shape[0]

    @property
    def src_mask(self):
        return np.arange(self.src.shape[1])[None, :] < self.src_lengths[:, None]

    @property
    def tgt_mask(self):
        return np.arange(self.tgt.shape[1])[None, :] < self.tgt_lengths[:, None]

    @property
    def num_target_tokens(self):
        """Predicted positions: every target token after <s>, </s> included."""
        return int((self.tgt_lengths - 1).sum())

    @property
    def padding_tokens(self):
        return int((~self.src_mask).sum() + (~self.tgt_mask).sum())

    def rows(self, idx):
        """Sub-batch of the given rows, re-trimmed to its own maximum lengths."""
        idx = np.asarray(idx)
        s = int(self.src_lengths[idx].max())
        t = int(self.tgt_lengths[idx].max())
        return Batch(
            self.src[idx, :s], self.tgt[idx, :t],
            self.src_lengths[idx], self.tgt_lengths[idx], self.indices[idx],
            [f[idx, :s] for f in self.src_feats],
            [f[idx, :t] for f in self.tgt_feats],
        )


def _as_example(pair):
    if isinstance(pair, Example):
        return pair
    return Example(list(pair[0]), list(pair[1]))


def _pad(seqs, width):
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def collate(examples, indices):
    for ex in examples:
        if not ex.src:
            raise ValueError("source sentences must be non-empty")
    srcs = [ex.src for ex in examples]
    tgts = [[BOS, *ex.tgt, EOS] for ex in examples]
    s = max(len(x) for x in srcs)
    t = max(len(x) for x in tgts)
    n_src_f = len(examples[0].src_feats)
    n_tgt_f = len(examples[0].tgt_feats)
    src_feats = [_pad([ex.src_feats[k] for ex in examples], s) for k in range(n_src_f)]
    tgt_feats = [_pad([[BOS, *ex.tgt_feats[k], EOS] for ex in examples], t) for k in range(n_tgt_f)]
    return Batch(
        _pad(srcs, s), _pad(tgts, t),
        np.array([len(x) for x in srcs], dtype=np.int64),
        np.array([len(x) for x in tgts], dtype=np.int64),
        np.asarray(indices, dtype=np.int64),
        src_feats, tgt_feats,
    )


def make_batches(pairs, batch_size, shuffle_seed=0):
    """Bucket by source length, group consecutive runs, shuffle the batch order.

    Sorting is stable on (source length, target length, input position),
    so the grouping is fully determined by the data; only the order of the
    batches depends on ``shuffle_seed``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    examples = [_as_example(p) for p in pairs]
    if not examples:
        return []
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].src), len(examples[i].tgt), i))
    groups = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    perm = np.random.default_rng(shuffle_seed).permutation(len(groups))
    return [collate([examples[i] for i in groups[g]], groups[g]) for g in perm]
