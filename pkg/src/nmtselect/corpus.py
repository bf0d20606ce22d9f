"""Parallel text loading, vocabularies, length filtering and seeded batching."""
from collections import Counter
from dataclasses import dataclass
import hashlib

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

DEFAULT_MAX_LEN = 80
DEFAULT_VOCAB_CAP = 50_000
DEFAULT_BATCH_SIZE = 64


class CorpusError(ValueError):
    pass


def tokenize(line):
    return line.split()


def _read_lines(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Corpus:
    """Tokenized parallel text. Ids are stable and survive filtering."""

    def __init__(self, source, target, ids=None):
        if len(source) != len(target):
            raise CorpusError(
                f"source has {len(source)} sentences but target has {len(target)}")
        self.source = [list(s) for s in source]
        self.target = [list(t) for t in target]
        if ids is None:
            ids = np.arange(len(self.source), dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        if len(self.ids) != len(self.source):
            raise CorpusError("id list does not match corpus size")

    def __len__(self):
        return len(self.source)

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.source, self.target))

    def subset(self, keep):
        keep = np.asarray(keep, dtype=bool)
        idx = np.flatnonzero(keep)
        return Corpus([self.source[i] for i in idx], [self.target[i] for i in idx],
                      self.ids[idx])

    def select_ids(self, ids):
        pos = {int(i): k for k, i in enumerate(self.ids)}
        idx = [pos[int(i)] for i in ids]
        return Corpus([self.source[i] for i in idx], [self.target[i] for i in idx],
                      self.ids[idx])

    def token_counts(self):
        return (sum(len(s) for s in self.source), sum(len(t) for t in self.target))


def load_bitext(source_path, target_path):
    src = _read_lines(source_path)
    tgt = _read_lines(target_path)
    if len(src) != len(tgt):
        raise CorpusError(
            f"line-count mismatch: {source_path} has {len(src)} lines, "
            f"{target_path} has {len(tgt)} lines")
    return Corpus([tokenize(s) for s in src], [tokenize(t) for t in tgt])


def filter_by_length(corpus, max_len=DEFAULT_MAX_LEN):
    """Keep pairs with 1 <= n <= max_len and 1 <= m <= max_len (ids preserved)."""
    if max_len < 1:
        raise CorpusError(f"max_len must be >= 1, got {max_len}")
    keep = [1 <= len(s) <= max_len and 1 <= len(t) <= max_len
            for s, t in zip(corpus.source, corpus.target)]
    return corpus.subset(keep)


class Vocabulary:
    """Token/id bijection with PAD, BOS, EOS, UNK on ids 0-3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise CorpusError(f"vocabulary must start with {RESERVED}")
        self.itos = tokens
        self.stoi = {tok: i for i, tok in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise CorpusError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, ids, strip=True):
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.itos:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        return cls(_read_lines(path))

    def fingerprint(self):
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


def build_vocab(corpus, side, cap=DEFAULT_VOCAB_CAP):
    """Frequency-ranked vocabulary; ties keep first-occurrence order."""
    if cap < 5:
        raise CorpusError(f"vocabulary cap must be >= 5, got {cap}")
    if len(corpus) == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if side not in ("source", "target"):
        raise CorpusError(f"side must be 'source' or 'target', got {side!r}")
    sents = corpus.source if side == "source" else corpus.target
    counts = Counter()
    first = {}
    for sent in sents:
        for tok in sent:
            if tok not in first:
                first[tok] = len(first)
            counts[tok] += 1
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return Vocabulary(list(RESERVED) + ranked[:cap - len(RESERVED)])


@dataclass(frozen=True)
class SentencePair:
    id: int
    source: tuple
    target: tuple


class EncodedCorpus:
    """Numericalized corpus, addressable by stable pair id."""

    def __init__(self, corpus, src_vocab, tgt_vocab):
        self.text = corpus
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.pairs = [SentencePair(i, tuple(src_vocab.encode(s)), tuple(tgt_vocab.encode(t)))
                      for i, s, t in corpus]
        self.by_id = {p.id: p for p in self.pairs}
        self.ids = np.array([p.id for p in self.pairs], dtype=np.int64)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, pair_id):
        try:
            return self.by_id[int(pair_id)]
        except KeyError:
            raise KeyError(f"unknown sentence pair id {int(pair_id)}") from None

    def references(self):
        """Raw target token lists, in corpus order."""
        return [list(t) for t in self.text.target]

    def sources(self):
        return [list(p.source) for p in self.pairs]

    def target_lengths(self):
        """Target lengths including EOS."""
        return {p.id: len(p.target) + 1 for p in self.pairs}


def numericalize(corpus, src_vocab, tgt_vocab):
    return EncodedCorpus(corpus, src_vocab, tgt_vocab)


def detokenize(ids, vocab):
    return " ".join(vocab.decode(ids))


@dataclass
class Batch:
    ids: np.ndarray         # (B,) member pair ids, duplicates allowed
    src: np.ndarray         # (B, S) padded with PAD
    tgt_in: np.ndarray      # (B, T) BOS y_1 .. y_m
    tgt_out: np.ndarray     # (B, T) y_1 .. y_m EOS
    src_len: np.ndarray     # (B,)
    tgt_len: np.ndarray     # (B,) includes EOS

    def __len__(self):
        return len(self.ids)

    @property
    def n_tokens(self):
        return int(self.tgt_len.sum())


def collate(pairs):
    """Pad a list of SentencePairs into a Batch."""
    B = len(pairs)
    src_len = np.array([len(p.source) for p in pairs], dtype=np.int64)
    tgt_len = np.array([len(p.target) + 1 for p in pairs], dtype=np.int64)
    S = int(src_len.max()) if B else 0
    T = int(tgt_len.max()) if B else 0
    src = np.full((B, S), PAD, dtype=np.int64)
    tgt_in = np.full((B, T), PAD, dtype=np.int64)
    tgt_out = np.full((B, T), PAD, dtype=np.int64)
    for b, p in enumerate(pairs):
        src[b, :len(p.source)] = p.source
        tgt_in[b, 0] = BOS
        tgt_in[b, 1:len(p.target) + 1] = p.target
        tgt_out[b, :len(p.target)] = p.target
        tgt_out[b, len(p.target)] = EOS
    ids = np.array([p.id for p in pairs], dtype=np.int64)
    return Batch(ids, src, tgt_in, tgt_out, src_len, tgt_len)


def make_batches(plan, corpus, batch_size=DEFAULT_BATCH_SIZE, seed=0):
    """Shuffle the plan with a seeded permutation and chunk it into Batches.

    ``plan`` is a sequence of pair ids (a SelectionPlan is accepted too);
    duplicated ids produce duplicated members.
    """
    if batch_size < 1:
        raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
    ids = np.asarray(getattr(plan, "ids", plan), dtype=np.int64)
    pairs = [corpus[i] for i in ids]
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [collate([pairs[k] for k in order[start:start + batch_size]])
            for start in range(0, len(order), batch_size)]


def corpus_stats(corpus):
    n_src, n_tgt = corpus.token_counts()
    return {"sentences": len(corpus), "source_tokens": n_src, "target_tokens": n_tgt}
