"""Epoch data-selection policies: default, boost, reduce and bootstrap.

Every fractional count is rounded up, and ties in difficulty break by
ascending sentence id, so plans are exact and replayable.
"""
import csv
from dataclasses import dataclass, field
import enum
from fractions import Fraction
import hashlib
import math

import numpy as np

from .difficulty import NormalizationMode


class PolicyKind(enum.Enum):
    DEFAULT = "default"
    BOOST = "boost"
    REDUCE = "reduce"
    BOOTSTRAP = "bootstrap"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown policy {value!r} "
                             f"(expected one of {[k.value for k in cls]})") from None


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.DEFAULT
    boost_ratio: float = 0.10
    reduce_keep: float = 0.80
    reduce_restart_period: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind.parse(self.kind))
        if not 0 < self.boost_ratio <= 1:
            raise ValueError(f"boost_ratio must lie in (0, 1], got {self.boost_ratio}")
        if not 0 < self.reduce_keep < 1:
            raise ValueError(f"reduce_keep must lie in (0, 1), got {self.reduce_keep}")
        if self.reduce_restart_period < 2:
            raise ValueError("reduce_restart_period must be >= 2")


@dataclass
class SelectionPlan:
    epoch: int
    ids: np.ndarray
    note: str = ""

    def __len__(self):
        return len(self.ids)

    def copies(self):
        """``(unit_id, copies)`` pairs sorted by id."""
        uniq, counts = np.unique(self.ids, return_counts=True)
        return list(zip(uniq.tolist(), counts.tolist()))


def ceil_fraction(ratio, n):
    """``ceil(ratio * n)`` computed on the decimal value of ``ratio``."""
    return math.ceil(Fraction(str(ratio)) * n)


def _as_ids(corpus_ids):
    if isinstance(corpus_ids, (int, np.integer)):
        if corpus_ids < 1:
            raise ValueError("corpus must hold at least one unit")
        return np.arange(int(corpus_ids), dtype=np.int64)
    ids = np.asarray(corpus_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("corpus must hold at least one unit")
    return ids


def _scores(ledger, ids, mode):
    """Ranking scores aligned with ``ids`` (higher = harder, unscored = +inf)."""
    if ledger is None:
        return np.full(len(ids), np.inf)
    if hasattr(ledger, "sentence_scores"):
        return ledger.sentence_scores(ids, mode, ranking=True)
    if isinstance(ledger, dict):
        return np.array([ledger.get(int(i), np.inf) for i in ids], dtype=np.float64)
    scores = np.asarray(ledger, dtype=np.float64)
    if scores.shape != ids.shape:
        raise ValueError("score array must align with the id array")
    return scores


def hardest(ids, scores, k):
    """The ``k`` highest-scoring ids; ties broken by ascending id."""
    ids = np.asarray(ids, dtype=np.int64)
    order = np.lexsort((ids, -np.asarray(scores, dtype=np.float64)))
    return ids[order[:k]]


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:12]


def plan_default(corpus_ids, epoch):
    ids = _as_ids(corpus_ids)
    return SelectionPlan(epoch, ids.copy(), f"default epoch={epoch}")


def plan_boost(ledger, corpus_ids, boost_ratio, epoch, mode=NormalizationMode.BY_TARGET_LENGTH):
    """All ids once plus the ceil(ratio * N) hardest ids once more (epoch >= 2)."""
    ids = _as_ids(corpus_ids)
    if epoch <= 1:
        return SelectionPlan(epoch, ids.copy(), f"boost epoch={epoch} (no scores yet)")
    scores = _scores(ledger, ids, mode)
    extra = np.sort(hardest(ids, scores, ceil_fraction(boost_ratio, len(ids))))
    return SelectionPlan(epoch, np.concatenate([ids, extra]),
                         f"boost epoch={epoch} ratio={boost_ratio} inputs={_digest(ids, scores)}")


def plan_reduce(ledger, corpus_ids, keep, restart_period, epoch, active_set=None,
                mode=NormalizationMode.BY_TARGET_LENGTH):
    """Returns ``(plan, new_active_set)``.

    Restart epochs (1, 1 + period, ...) use every id; other epochs keep the
    ceil(keep * |active|) hardest members of the current active set.
    """
    ids = _as_ids(corpus_ids)
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if (epoch - 1) % restart_period == 0 or active_set is None:
        active = ids.copy()
        note = f"reduce epoch={epoch} restart"
    else:
        active = np.asarray(active_set, dtype=np.int64)
        scores = _scores(ledger, active, mode)
        active = np.sort(hardest(active, scores, ceil_fraction(keep, len(active))))
        note = f"reduce epoch={epoch} keep={keep} inputs={_digest(active_set, scores)}"
    return SelectionPlan(epoch, active.copy(), note), active


def plan_bootstrap(corpus_ids, seed, epoch):
    """N uniform draws with replacement, seeded by ``(seed, epoch)``."""
    ids = _as_ids(corpus_ids)
    rng = np.random.default_rng([int(seed), int(epoch)])
    draw = ids[rng.integers(0, len(ids), size=len(ids))]
    return SelectionPlan(epoch, draw, f"bootstrap epoch={epoch} seed={seed}")


@dataclass
class Policy:
    """Stateful wrapper the trainer calls once per epoch."""

    config: PolicyConfig
    corpus_ids: np.ndarray
    mode: NormalizationMode = NormalizationMode.BY_TARGET_LENGTH
    active_set: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.corpus_ids = _as_ids(self.corpus_ids)
        self.mode = NormalizationMode.parse(self.mode)

    def plan(self, epoch, ledger):
        cfg = self.config
        if cfg.kind is PolicyKind.DEFAULT:
            return plan_default(self.corpus_ids, epoch)
        if cfg.kind is PolicyKind.BOOST:
            return plan_boost(ledger, self.corpus_ids, cfg.boost_ratio, epoch, self.mode)
        if cfg.kind is PolicyKind.REDUCE:
            plan, self.active_set = plan_reduce(ledger, self.corpus_ids, cfg.reduce_keep,
                                                cfg.reduce_restart_period, epoch,
                                                self.active_set, self.mode)
            return plan
        return plan_bootstrap(self.corpus_ids, cfg.seed, epoch)


def expected_plan_size(config, n, epoch):
    """Plan size implied by the policy arithmetic alone."""
    kind = PolicyKind.parse(config.kind)
    if kind in (PolicyKind.DEFAULT, PolicyKind.BOOTSTRAP):
        return n
    if kind is PolicyKind.BOOST:
        return n if epoch <= 1 else n + ceil_fraction(config.boost_ratio, n)
    size = n
    for _ in range((epoch - 1) % config.reduce_restart_period):
        size = ceil_fraction(config.reduce_keep, size)
    return size


PLAN_CSV_HEADER = ["epoch", "unit_id", "copies"]


def write_plan_rows(writer, plan):
    for uid, copies in plan.copies():
        writer.writerow([plan.epoch, uid, copies])


def write_plans_csv(path, plans):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_CSV_HEADER)
        for plan in plans:
            write_plan_rows(w, plan)


def read_plans_csv(path):
    """``{epoch: ids}`` with each id repeated by its copy count."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["epoch"]), []).extend([int(row["unit_id"])] * int(row["copies"]))
    return {e: np.array(v, dtype=np.int64) for e, v in out.items()}
