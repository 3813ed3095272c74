"""Text ingestion: tweet-style tokenization, cleaning, vocabulary, encoding, batching.

Cleaning rules applied to every document:

* documents whose raw text contains "http" are dropped,
* @mention tokens become the reserved marker "@USER",
* documents shorter than 5 tokens (after tokenization) are dropped.

The vocabulary is built from the training split only; tokens seen fewer than
two times map to UNK at encode time.  Ids 0 and 1 are reserved for PAD / UNK.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MENTION_TOKEN = "@USER"
MIN_TOKENS = 5

_PUNCT = set(string.punctuation)


class ParseError(ValueError):
    """A data file violated its line format; message carries file and line."""


@dataclass(frozen=True)
class RawDoc:
    label: int
    text: str


@dataclass(frozen=True)
class CleanDoc:
    label: int
    tokens: tuple

    def text(self):
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Rejected:
    """Cleaning verdict for a dropped document (a value, not an error)."""

    reason: str  # "url" or "length"


@dataclass
class EncodedDoc:
    ids: np.ndarray  # (L,) int32, PAD-padded
    valid_len: int
    label: int


@dataclass
class Batch:
    ids: np.ndarray  # (B, L) int32
    valid_lens: np.ndarray  # (B,) int32
    labels: np.ndarray  # (B,) int64
    tokens: list | None = None  # optional per-doc token strings, for rendering


def tokenize(text: str) -> list:
    """Lowercase, whitespace-split, and peel trailing punctuation runs.

    A trailing run of punctuation becomes its own single token ("yay!!!" ->
    ["yay", "!!!"]), which keeps emoticons, "!!" and friends intact while
    hashtags and @mentions survive unsplit (their marker is leading).
    """
    tokens = []
    for chunk in text.lower().split():
        i = len(chunk)
        while i > 0 and chunk[i - 1] in _PUNCT:
            i -= 1
        if i == len(chunk) or i == 0:
            tokens.append(chunk)
        else:
            tokens.append(chunk[:i])
            tokens.append(chunk[i:])
    return tokens


def clean(doc: RawDoc):
    """Apply the rejection and normalization rules to one document."""
    if "http" in doc.text.lower():
        return Rejected("url")
    tokens = [
        MENTION_TOKEN if t.startswith("@") and len(t) > 1 else t
        for t in tokenize(doc.text)
    ]
    if len(tokens) < MIN_TOKENS:
        return Rejected("length")
    return CleanDoc(label=doc.label, tokens=tuple(tokens))


@dataclass
class Vocabulary:
    """Token ids with reserved PAD=0 and UNK=1 entries.

    Only tokens that occurred at least twice in the training corpus are
    retained; everything else encodes to UNK.
    """

    token_to_id: dict = field(default_factory=dict)
    id_to_token: list = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __len__(self):
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.token_to_id[token] = idx
        self.id_to_token.append(token)
        return idx

    def save(self, path):
        # one token per line; ids are implicit (line i holds id i + 2)
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[2:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok = line.rstrip("\n")
                if tok:
                    vocab.add(tok)
        return vocab


def build_vocab(docs) -> Vocabulary:
    """Vocabulary over tokens appearing at least twice, in first-occurrence order."""
    docs = list(docs)
    if not docs:
        raise ValueError("build_vocab: empty corpus")
    counts = Counter()
    for doc in docs:
        counts.update(doc.tokens)
    vocab = Vocabulary()
    for doc in docs:
        for tok in doc.tokens:
            if counts[tok] >= 2:
                vocab.add(tok)
    return vocab


def encode(doc: CleanDoc, vocab: Vocabulary, max_len: int) -> EncodedDoc:
    """Map tokens to ids, truncate to the first ``max_len``, right-pad with PAD."""
    if max_len <= 0:
        raise ValueError(f"encode: max_len must be positive, got {max_len}")
    kept = doc.tokens[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    for i, tok in enumerate(kept):
        ids[i] = vocab.lookup(tok)
    return EncodedDoc(ids=ids, valid_len=len(kept), label=doc.label)


def decode(vocab: Vocabulary, enc: EncodedDoc) -> list:
    return [vocab.token(int(i)) for i in enc.ids[: enc.valid_len]]


def load_pretrained(path, vocab: Vocabulary, dim: int, rng) -> np.ndarray:
    """Embedding matrix (|V|, dim): file vectors where available, else U(-.05, .05).

    The random rows are drawn in one deterministic block before the file is
    consulted, so the same rng stream gives the same matrix regardless of
    which tokens the file happens to contain.  The PAD row is zeroed last.
    """
    mat = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(np.float32)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected token + {dim} values, got {len(parts)} fields"
                )
            token = parts[0]
            try:
                vec = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if token in vocab.token_to_id:
                mat[vocab.token_to_id[token]] = np.asarray(vec, dtype=np.float32)
    mat[PAD_ID] = 0.0
    return mat


def init_embedding(vocab_size: int, dim: int, rng) -> np.ndarray:
    """Random embedding init used when no pretrained file is given."""
    mat = rng.uniform(-0.05, 0.05, size=(vocab_size, dim)).astype(np.float32)
    mat[PAD_ID] = 0.0
    return mat


def make_batches(docs, batch_size: int, shuffle_seed) -> list:
    """Shuffle, then cut into contiguous batches (final short batch kept)."""
    if batch_size < 1:
        raise ValueError(f"make_batches: batch_size must be >= 1, got {batch_size}")
    docs = list(docs)
    order = np.arange(len(docs))
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    batches = []
    for start in range(0, len(docs), batch_size):
        chunk = [docs[i] for i in order[start : start + batch_size]]
        batches.append(
            Batch(
                ids=np.stack([d.ids for d in chunk]),
                valid_lens=np.asarray([d.valid_len for d in chunk], dtype=np.int32),
                labels=np.asarray([d.label for d in chunk], dtype=np.int64),
            )
        )
    return batches


def load_tsv(path) -> list:
    """Read "label<TAB>text" lines into RawDocs, in file order."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: missing TAB separator")
            label_str, text = line.split("\t", 1)
            if label_str not in ("0", "1"):
                raise ParseError(
                    f"{path}:{lineno}: label must be 0 or 1, got {label_str!r}"
                )
            docs.append(RawDoc(label=int(label_str), text=text))
    return docs


def save_encoded(path, docs) -> None:
    """Write encoded docs as "label<TAB>valid_len<TAB>id id id ..." lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            ids = " ".join(str(int(i)) for i in d.ids)
            fh.write(f"{d.label}\t{d.valid_len}\t{ids}\n")


def load_encoded(path) -> list:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                label = int(parts[0])
                valid_len = int(parts[1])
                ids = np.asarray([int(x) for x in parts[2].split()], dtype=np.int32)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            docs.append(EncodedDoc(ids=ids, valid_len=valid_len, label=label))
    return docs


@dataclass
class SplitStats:
    name: str
    total: int
    rejected_url: int
    rejected_short: int
    kept: int
    avg_tokens: float


def clean_split(name, raw_docs):
    """Clean every doc of a split, returning (kept CleanDocs, SplitStats)."""
    kept, n_url, n_short = [], 0, 0
    for doc in raw_docs:
        result = clean(doc)
        if isinstance(result, Rejected):
            if result.reason == "url":
                n_url += 1
            else:
                n_short += 1
        else:
            kept.append(result)
    avg = sum(len(d.tokens) for d in kept) / len(kept) if kept else 0.0
    return kept, SplitStats(
        name=name,
        total=len(raw_docs),
        rejected_url=n_url,
        rejected_short=n_short,
        kept=len(kept),
        avg_tokens=avg,
    )
