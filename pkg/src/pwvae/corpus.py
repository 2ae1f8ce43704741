"""Corpus ingestion: vocabulary, sparse count vectors, synthetic data.

File formats (gzip variants accepted by `.gz` extension):

* vocabulary: one token per line, UTF-8; id = zero-based line number.
* documents: one document per line, ASCII,
  ``doc_id term:count term:count ...`` with space separators.
* labels (optional sidecar): one label per line, aligned with documents.

Counts are stored as integers; the optional log(1 + TF) transform is
applied only when a document is densified for the encoder.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CorpusFormatError",
    "Document",
    "Corpus",
    "TRANSFORMS",
    "load_corpus",
    "save_corpus",
    "load_labels",
    "make_synthetic_bimodal",
]

logger = logging.getLogger(__name__)

TRANSFORMS = ("none", "log1p_tf")


class CorpusFormatError(ValueError):
    """Malformed vocabulary or document file."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    term_ids: np.ndarray
    counts: np.ndarray
    label: str | None = None

    def __post_init__(self):
        ids = np.asarray(self.term_ids, dtype=np.int64)
        cnt = np.asarray(self.counts, dtype=np.int64)
        ids.flags.writeable = False
        cnt.flags.writeable = False
        object.__setattr__(self, "term_ids", ids)
        object.__setattr__(self, "counts", cnt)

    @property
    def token_count(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Corpus:
    vocab: tuple[str, ...]
    docs: tuple[Document, ...]
    transform: str = "none"
    dropped_docs: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}; expected one of {TRANSFORMS}")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def __len__(self) -> int:
        return len(self.docs)

    def dense(self, doc: Document) -> np.ndarray:
        """Dense encoder input for one document, transform applied."""
        v = np.zeros(self.vocab_size, dtype=np.float64)
        v[doc.term_ids] = doc.counts
        if self.transform == "log1p_tf":
            v = np.log1p(v)
        return v

    def dense_counts(self, doc: Document) -> np.ndarray:
        """Raw count vector, independent of the transform."""
        v = np.zeros(self.vocab_size, dtype=np.float64)
        v[doc.term_ids] = doc.counts
        return v


def _open_text(path: str, mode: str = "rt"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _load_vocab(path: str) -> tuple[str, ...]:
    with _open_text(path) as fh:
        vocab = tuple(line.rstrip("\n") for line in fh)
    if not vocab:
        raise CorpusFormatError(f"{path}: empty vocabulary")
    return vocab


def load_labels(path: str) -> tuple[str, ...]:
    with _open_text(path) as fh:
        return tuple(line.strip() for line in fh)


def load_corpus(vocab_path: str, docs_path: str, transform: str = "none", labels_path: str | None = None) -> Corpus:
    """Load a corpus, filtering terms outside the vocabulary.

    Term ids at or above the vocabulary size are treated as
    out-of-vocabulary and dropped; documents left empty are removed and
    the number of removals is reported.  Negative ids, non-numeric
    fields, or counts below 1 are parse errors.
    """
    vocab = _load_vocab(vocab_path)
    labels = load_labels(labels_path) if labels_path else None
    docs: list[Document] = []
    dropped = 0
    with _open_text(docs_path) as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            doc_id = parts[0]
            ids: list[int] = []
            counts: list[int] = []
            for tok in parts[1:]:
                try:
                    tid_s, cnt_s = tok.split(":")
                    tid, cnt = int(tid_s), int(cnt_s)
                except ValueError:
                    raise CorpusFormatError(f"{docs_path}:{lineno}: malformed term entry {tok!r}") from None
                if tid < 0:
                    raise CorpusFormatError(f"{docs_path}:{lineno}: negative term id {tid}")
                if cnt < 1:
                    raise CorpusFormatError(f"{docs_path}:{lineno}: count must be >= 1, got {cnt}")
                if tid >= len(vocab):
                    continue  # out of vocabulary
                ids.append(tid)
                counts.append(cnt)
            file_index = len(docs) + dropped
            if not ids:
                dropped += 1
                continue
            if labels is not None and file_index >= len(labels):
                raise CorpusFormatError(f"{labels_path}: fewer labels than documents")
            label = labels[file_index] if labels else None
            docs.append(Document(doc_id=doc_id, term_ids=np.array(ids), counts=np.array(counts), label=label))
        if lineno == 0:
            raise CorpusFormatError(f"{docs_path}: no documents")
    if not docs:
        raise CorpusFormatError(f"{docs_path}: no documents")
    if dropped:
        logger.warning("%s: dropped %d empty document(s) after vocabulary filtering", docs_path, dropped)
    return Corpus(vocab=vocab, docs=tuple(docs), transform=transform, dropped_docs=dropped)


def save_corpus(corpus: Corpus, vocab_path: str, docs_path: str, labels_path: str | None = None) -> None:
    with _open_text(vocab_path, "wt") as fh:
        for token in corpus.vocab:
            fh.write(token + "\n")
    with _open_text(docs_path, "wt") as fh:
        for doc in corpus.docs:
            entries = " ".join(f"{t}:{c}" for t, c in zip(doc.term_ids, doc.counts))
            fh.write(f"{doc.doc_id} {entries}\n")
    if labels_path is not None:
        with _open_text(labels_path, "wt") as fh:
            for doc in corpus.docs:
                fh.write((doc.label or "-") + "\n")


def make_synthetic_bimodal(num_docs: int, vocab_size: int, seed: int) -> Corpus:
    """Two-topic corpus for multi-modality checks.

    Each document picks one of two modes uniformly; mode 0 puts 95% of its
    word mass uniformly on the first half of the vocabulary and 5% on the
    second half, mode 1 mirrors that.  Document lengths follow
    Poisson(50) + 1.  Deterministic for a fixed seed.
    """
    if vocab_size % 2 != 0:
        raise ValueError("make_synthetic_bimodal: vocab_size must be even")
    rng = np.random.default_rng(seed)
    half = vocab_size // 2
    p0 = np.concatenate([np.full(half, 0.95 / half), np.full(half, 0.05 / half)])
    p1 = p0[::-1].copy()
    vocab = tuple(f"w{i}" for i in range(vocab_size))
    docs = []
    for i in range(num_docs):
        mode = int(rng.integers(2))
        length = int(rng.poisson(50.0)) + 1
        words = rng.choice(vocab_size, size=length, p=p0 if mode == 0 else p1)
        ids, counts = np.unique(words, return_counts=True)
        docs.append(Document(doc_id=str(i), term_ids=ids, counts=counts, label=str(mode)))
    return Corpus(vocab=vocab, docs=tuple(docs))
