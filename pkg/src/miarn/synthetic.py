"""Synthetic contrast corpus: label 1 iff a document mixes the two lexicons.

Documents are bags of filler words plus optional sentiment markers; a
document is positive exactly when it contains at least one token from the
POS lexicon and at least one from the NEG lexicon.  The label function is
the ground-truth oracle, so a detector has to notice the co-occurrence, not
just the presence, of marker tokens.  Negative documents may repeat markers
from a single lexicon, which defeats plain token-count thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import RawDoc
from .numerics import substream

POS_TOKENS = tuple(f"pos{i}" for i in range(6))
NEG_TOKENS = tuple(f"neg{i}" for i in range(6))
FILLER_TOKENS = tuple(f"w{i:02d}" for i in range(48))


def contrast_label(tokens, pos_set=frozenset(POS_TOKENS), neg_set=frozenset(NEG_TOKENS)) -> int:
    """The oracle: 1 iff tokens hit both lexicons."""
    toks = set(tokens)
    return int(bool(toks & set(pos_set)) and bool(toks & set(neg_set)))


@dataclass
class ContrastCorpus:
    train: list
    dev: list
    test: list
    pos_tokens: tuple = POS_TOKENS
    neg_tokens: tuple = NEG_TOKENS
    filler_tokens: tuple = FILLER_TOKENS


def _make_doc(rng, min_len, max_len):
    length = int(rng.integers(min_len, max_len + 1))
    roll = rng.random()
    markers = []
    if roll < 0.5:  # both lexicons, one marker each
        markers = [str(rng.choice(POS_TOKENS)), str(rng.choice(NEG_TOKENS))]
    elif roll < 0.75:  # one lexicon only, possibly repeated
        lexicon = POS_TOKENS if rng.random() < 0.5 else NEG_TOKENS
        repeats = 2 if rng.random() < 0.35 else 1
        markers = [str(rng.choice(lexicon)) for _ in range(repeats)]
    # else: fillers only
    fill = [str(t) for t in rng.choice(FILLER_TOKENS, size=length - len(markers))]
    tokens = markers + fill
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]
    return RawDoc(label=contrast_label(tokens), text=" ".join(tokens))


def generate_contrast_corpus(
    n_train=2000, n_dev=400, n_test=400, seed=0, min_len=6, max_len=15
) -> ContrastCorpus:
    rng = substream(seed, "synthetic-contrast")
    docs = [_make_doc(rng, min_len, max_len) for _ in range(n_train + n_dev + n_test)]
    return ContrastCorpus(
        train=docs[:n_train],
        dev=docs[n_train : n_train + n_dev],
        test=docs[n_train + n_dev :],
    )
