"""Shared builders for the test suite."""

import numpy as np
import pytest

from miarn import corpus, model
from miarn.numerics import substream


def random_batch(rng, batch_size, max_len, vocab_size, min_len=2):
    """A batch of random documents with ids in [2, vocab_size)."""
    lens = rng.integers(min_len, max_len + 1, size=batch_size)
    ids = np.zeros((batch_size, max_len), dtype=np.int32)
    for i, m in enumerate(lens):
        ids[i, :m] = rng.integers(2, vocab_size, size=m)
    return corpus.Batch(
        ids=ids,
        valid_lens=lens.astype(np.int32),
        labels=rng.integers(0, 2, size=batch_size).astype(np.int64),
    )


def conditioned_gradcheck_model(kind, seed, vocab_size=12, n=8, d=8, k=4):
    """Float64 model whose parameter entries are bounded away from zero.

    Central differences lose all significant digits on entries whose true
    gradient sits below ~1e-7 (the loss rounds at ~1e-16 and the error
    formula floors the denominator at 1e-8).  Bounding |w| >= 0.02 keeps the
    L2 term of every weight above that noise; biases get explicit random
    values for the same reason.  The PAD embedding row stays pinned at zero.
    """
    rng = substream(seed, "gradcheck")
    net = model.build_model(kind, vocab_size, n, d, rng, k=k, dtype=np.float64)
    for name, p in net.parameters():
        if p.data.ndim == 1:
            p.data = rng.uniform(-0.2, 0.2, size=p.shape)
        p.data = p.data + np.where(p.data >= 0, 0.02, -0.02)
        if name == "embedding":
            p.data[0] = 0.0
    return net, rng


def gradcheck_loss_fn(net, batch, lam=1e-2):
    def f(_params):
        yhat, _ = net.forward(batch)
        return model.loss(yhat, batch.labels, lam, net.l2_weights())

    return f


def encode_raw_docs(raw_docs, vocab, max_len):
    cleaned, _ = corpus.clean_split("x", raw_docs)
    return [corpus.encode(d, vocab, max_len) for d in cleaned]


@pytest.fixture(scope="session")
def tiny_prepared(tmp_path_factory):
    """A small prepared data directory with a quickly trainable task.

    Documents containing the token "good" are labeled 1, "bad" 0; every token
    appears many times so nothing falls to UNK.
    """
    rng = substream(123, "tiny-corpus")
    fillers = [f"f{i}" for i in range(10)]

    def doc(label):
        toks = [str(t) for t in rng.choice(fillers, size=5)]
        toks.append("good" if label else "bad")
        order = rng.permutation(len(toks))
        return corpus.RawDoc(label=label, text=" ".join(toks[i] for i in order))

    def split(count):
        return [doc(int(i % 2 == 0)) for i in range(count)]

    base = tmp_path_factory.mktemp("tinydata")
    for name, docs in (("train", split(60)), ("dev", split(20)), ("test", split(20))):
        with open(base / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for d in docs:
                fh.write(f"{d.label}\t{d.text}\n")
    return base
