"""Filtered link-prediction ranking, triplet classification, and sweeps.

Ranking follows the filtered protocol: when replacing one element of a
gold test triple with every candidate, any candidate that forms a
different known-positive triple is removed before computing the gold
rank.  Ties get the mid-rank (mean of optimistic and pessimistic);
both extremes are also recorded for diagnostics.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol

import numpy as np

from .encoder import Encoder, pack_batch
from .graph import KnowledgeGraph, SubsampleSpec, Triple, subsample_train
from .loss import scores_and_residuals
from .shallow import ShallowModel, shallow_scores
from .text import EncodingCache, Tokenizer


class Scorer(Protocol):
    """Read-only triple-scoring capability used by every evaluation task."""

    def score_all_heads(self, r: int, t: int) -> np.ndarray: ...
    def score_all_tails(self, h: int, r: int) -> np.ndarray: ...
    def score_one(self, h: int, r: int, t: int) -> float: ...


class EncoderScorer:
    """Scores triples by encoding each candidate sequence in full.

    Candidates sharing a prefix are still re-encoded from scratch, since
    attention mixes all three segments.
    """

    def __init__(self, g: KnowledgeGraph, encoder: Encoder, tok: Tokenizer,
                 b: float, batch_size: int = 256):
        self.g = g
        self.encoder = encoder
        self.tok = tok
        self.b = b
        self.batch_size = batch_size
        self._cache = EncodingCache(tok, g)

    def _scores(self, triples: list[Triple]) -> np.ndarray:
        out = np.empty(len(triples))
        for start in range(0, len(triples), self.batch_size):
            chunk = triples[start:start + self.batch_size]
            packed = pack_batch(self._cache.get_many(chunk))
            pooled = self.encoder.forward(packed, train_mode=False,
                                          keep_cache=False)
            out[start:start + len(chunk)], _ = scores_and_residuals(pooled, self.b)
        return out

    def score_all_heads(self, r, t):
        return self._scores([Triple(h, r, t) for h in range(self.g.num_entities)])

    def score_all_tails(self, h, r):
        return self._scores([Triple(h, r, t) for t in range(self.g.num_entities)])

    def score_all_relations(self, h, t):
        return self._scores([Triple(h, r, t) for r in range(self.g.num_relations)])

    def score_one(self, h, r, t):
        return float(self._scores([Triple(h, r, t)])[0])


class ShallowScorer:
    """Vectorized lookup-table scoring."""

    def __init__(self, g: KnowledgeGraph, model: ShallowModel):
        self.g = g
        self.model = model

    def score_all_heads(self, r, t):
        n = self.g.num_entities
        return shallow_scores(self.model, np.arange(n), np.full(n, r), np.full(n, t))

    def score_all_tails(self, h, r):
        n = self.g.num_entities
        return shallow_scores(self.model, np.full(n, h), np.full(n, r), np.arange(n))

    def score_all_relations(self, h, t):
        n = self.g.num_relations
        return shallow_scores(self.model, np.full(n, h), np.arange(n), np.full(n, t))

    def score_one(self, h, r, t):
        return float(shallow_scores(self.model, np.array([h]), np.array([r]),
                                    np.array([t]))[0])


class TableScorer:
    """Scores looked up from an explicit table; used by tests and oracles."""

    def __init__(self, g: KnowledgeGraph, table: dict[tuple[int, int, int], float],
                 default: float = 0.0):
        self.g = g
        self.table = table
        self.default = default

    def score_one(self, h, r, t):
        return self.table.get((h, r, t), self.default)

    def score_all_heads(self, r, t):
        return np.array([self.score_one(h, r, t)
                         for h in range(self.g.num_entities)])

    def score_all_tails(self, h, r):
        return np.array([self.score_one(h, r, t)
                         for t in range(self.g.num_entities)])


class PerfectScorer:
    """Stub that scores known positives above everything else (test hook)."""

    def __init__(self, g: KnowledgeGraph):
        self.g = g

    def score_one(self, h, r, t):
        return 1.0 if (h, r, t) in self.g.positive_index else 0.0

    def score_all_heads(self, r, t):
        return np.array([self.score_one(h, r, t)
                         for h in range(self.g.num_entities)])

    def score_all_tails(self, h, r):
        return np.array([self.score_one(h, r, t)
                         for t in range(self.g.num_entities)])


@dataclass(frozen=True)
class RankRecord:
    triple: Triple
    side: str
    rank: float            # mid-rank under ties
    optimistic: float
    pessimistic: float


@dataclass
class RankingOutcome:
    records: list[RankRecord]
    mr: float
    mrr: float
    hits: dict[int, float]

    @property
    def ranks(self) -> np.ndarray:
        return np.array([rec.rank for rec in self.records])


def _filtered_rank_from_scores(scores: np.ndarray, gold: int,
                               filter_ids: set[int]) -> tuple[float, float, float]:
    gold_score = scores[gold]
    keep = np.ones(len(scores), dtype=bool)
    for idx in filter_ids:
        keep[idx] = False
    keep[gold] = True
    greater = int(np.sum(scores[keep] > gold_score))
    ties = int(np.sum(scores[keep] == gold_score)) - 1
    optimistic = 1.0 + greater
    pessimistic = optimistic + ties
    return (optimistic + pessimistic) / 2.0, optimistic, pessimistic


def filtered_rank(scorer: Scorer, g: KnowledgeGraph, query: Triple,
                  side: str) -> float:
    """Filtered rank of the gold element (mid-rank over exact ties)."""
    return filtered_rank_detail(scorer, g, query, side)[0]


def filtered_rank_detail(scorer: Scorer, g: KnowledgeGraph, query: Triple,
                         side: str) -> tuple[float, float, float]:
    """(mid, optimistic, pessimistic) filtered ranks for one query side."""
    h, r, t = query.head, query.relation, query.tail
    if side == "head":
        scores = scorer.score_all_heads(r, t)
        gold = h
        filter_ids = {c for c in range(g.num_entities)
                      if c != gold and (c, r, t) in g.positive_index}
    elif side == "tail":
        scores = scorer.score_all_tails(h, r)
        gold = t
        filter_ids = {c for c in range(g.num_entities)
                      if c != gold and (h, r, c) in g.positive_index}
    elif side == "relation":
        scores = scorer.score_all_relations(h, t)
        gold = r
        filter_ids = {c for c in range(g.num_relations)
                      if c != gold and (h, c, t) in g.positive_index}
    else:
        raise ValueError(f"side must be 'head', 'tail', or 'relation', got {side!r}")
    return _filtered_rank_from_scores(np.asarray(scores, dtype=np.float64),
                                      gold, filter_ids)


def aggregate_ranks(records: list[RankRecord],
                    cutoffs=(1, 3, 10)) -> tuple[float, float, dict[int, float]]:
    ranks = np.array([rec.rank for rec in records])
    mr = float(ranks.mean())
    mrr = float((1.0 / ranks).mean())
    hits = {k: float((ranks <= k).mean()) for k in cutoffs}
    return mr, mrr, hits


def link_prediction(scorer: Scorer, g: KnowledgeGraph, cutoffs=(1, 3, 10),
                    sides=("head", "tail"), threads: int = 1) -> RankingOutcome:
    """Filtered ranking of every test triple on the requested sides."""
    if not g.test:
        raise ValueError("test split is empty")
    queries = [(triple, side) for triple in g.test for side in sides]

    def run(item):
        triple, side = item
        mid, opt, pess = filtered_rank_detail(scorer, g, triple, side)
        return RankRecord(triple, side, mid, opt, pess)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, queries))
    else:
        records = [run(q) for q in queries]
    mr, mrr, hits = aggregate_ranks(records, cutoffs)
    return RankingOutcome(records=records, mr=mr, mrr=mrr, hits=hits)


class ThresholdResult(NamedTuple):
    threshold: float
    accuracy: float


def tune_threshold_over(scores: np.ndarray, labels: np.ndarray) -> ThresholdResult:
    """Best classify-above threshold over candidate cut points.

    Candidates are the midpoints between consecutive distinct scores plus
    -inf/+inf sentinels; accuracy ties resolve to the smaller threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or (~labels).all():
        raise ValueError("validation scores contain only one class")
    distinct = np.unique(scores)
    candidates = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0,
                                 [np.inf]])
    best = ThresholdResult(-np.inf, -1.0)
    for th in candidates:
        acc = float(((scores > th) == labels).mean())
        if acc > best.accuracy:
            best = ThresholdResult(float(th), acc)
    return best


def _labeled_split_scores(scorer: Scorer, triples: list[Triple],
                          labels: list[bool]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([scorer.score_one(t.head, t.relation, t.tail)
                       for t in triples])
    return scores, np.array(labels, dtype=bool)


def tune_threshold(scorer: Scorer, g: KnowledgeGraph) -> ThresholdResult:
    """Threshold maximizing accuracy on the labeled validation split."""
    if g.labels_valid is None:
        raise ValueError("validation split is not labeled")
    scores, labels = _labeled_split_scores(scorer, g.valid, g.labels_valid)
    return tune_threshold_over(scores, labels)


@dataclass
class ClassificationReport:
    threshold: float
    accuracy: float
    per_relation_errors: dict[int, float] = field(default_factory=dict)
    n_errors: int = 0


def triplet_classification(scorer: Scorer, g: KnowledgeGraph,
                           threshold: float) -> ClassificationReport:
    """Classify test triples as positive iff score > threshold."""
    if g.labels_test is None:
        raise ValueError("test split is not labeled")
    scores, labels = _labeled_split_scores(scorer, g.test, g.labels_test)
    predictions = scores > threshold
    wrong = predictions != labels
    accuracy = float((~wrong).mean())
    n_errors = int(wrong.sum())
    shares: dict[int, float] = {}
    if n_errors:
        for triple, bad in zip(g.test, wrong):
            if bad:
                shares[triple.relation] = shares.get(triple.relation, 0.0) + 1.0
        shares = {rel: count / n_errors for rel, count in shares.items()}
    return ClassificationReport(threshold=float(threshold), accuracy=accuracy,
                                per_relation_errors=shares, n_errors=n_errors)


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    value: float | None
    error: str | None = None


def low_resource_sweep(g: KnowledgeGraph, fractions: list[float],
                       callback: Callable[[KnowledgeGraph, float], float],
                       base_seed: int = 0) -> list[SweepRow]:
    """Train-and-eval callback over seed-derived training subsets.

    A failing fraction is recorded with its error message and the sweep
    continues with the remaining rows.
    """
    rows = []
    for i, fraction in enumerate(fractions):
        seed = int(np.random.SeedSequence([base_seed, i]).generate_state(1)[0])
        try:
            sub = subsample_train(g, SubsampleSpec(fraction=fraction, seed=seed))
            rows.append(SweepRow(fraction, float(callback(sub, fraction))))
        except Exception as exc:  # noqa: BLE001 - row failures must not kill the sweep
            rows.append(SweepRow(fraction, None, error=str(exc)))
    return rows


# ---------------------------------------------------------------------------
# CSV report writers and parsers


def write_ranking_csv(path: str, g: KnowledgeGraph, outcome: RankingOutcome) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "relation", "tail", "side", "rank",
                         "rank_optimistic", "rank_pessimistic"])
        for rec in outcome.records:
            t = rec.triple
            writer.writerow([g.entities[t.head], g.relations[t.relation],
                             g.entities[t.tail], rec.side, repr(rec.rank),
                             repr(rec.optimistic), repr(rec.pessimistic)])
        writer.writerow(["aggregate", "MR", repr(outcome.mr)])
        writer.writerow(["aggregate", "MRR", repr(outcome.mrr)])
        for k in sorted(outcome.hits):
            writer.writerow(["aggregate", f"Hits@{k}", repr(outcome.hits[k])])


def read_ranking_aggregates(path: str) -> dict[str, float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if row and row[0] == "aggregate":
                out[row[1]] = float(row[2])
    return out


def write_classification_csv(path: str, g: KnowledgeGraph,
                             report: ClassificationReport) -> None:
    ordered = sorted(report.per_relation_errors.items(),
                     key=lambda item: (-item[1], item[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "key", "value"])
        writer.writerow(["summary", "threshold", repr(report.threshold)])
        writer.writerow(["summary", "accuracy", repr(report.accuracy)])
        writer.writerow(["summary", "n_errors", report.n_errors])
        for rel, share in ordered:
            writer.writerow(["errors", g.relations[rel], repr(share)])


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "value", "error"])
        for row in rows:
            writer.writerow([repr(row.fraction),
                             "" if row.value is None else repr(row.value),
                             row.error or ""])
