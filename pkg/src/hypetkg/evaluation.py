"""Filtered ranking evaluation: MRR and Hits@1/3/10."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset, HyperFact, LpQuery, Qualifier, derive_queries


class FilterError(RuntimeError):
    pass


def qualifier_key(qualifiers: Iterable[Qualifier]) -> tuple[tuple[int, int], ...]:
    return tuple(sorted((q.relation, q.entity) for q in qualifiers))


class FilterSet:
    """Known true objects per query key.

    The key is ``(subject, relation, time, sorted qualifier pairs)``; with
    ``include_qualifiers=False`` it collapses to ``(subject, relation, time)``.
    """

    def __init__(self, facts: Iterable[HyperFact], include_qualifiers: bool = True):
        self.include_qualifiers = include_qualifiers
        self._truths: dict[tuple, set[int]] = defaultdict(set)
        for f in facts:
            self._truths[self._key(f.subject, f.relation, f.time, f.qualifiers)].add(f.object)

    def _key(self, s: int, r: int, t: int, quals: Iterable[Qualifier]) -> tuple:
        if self.include_qualifiers:
            return (s, r, t, qualifier_key(quals))
        return (s, r, t)

    def truths(self, query: LpQuery) -> set[int]:
        return self._truths.get(self._key(query.subject, query.relation, query.time, query.qualifiers), set())

    def __len__(self) -> int:
        return len(self._truths)

    @classmethod
    def from_dataset(cls, ds: Dataset, include_qualifiers: bool = True) -> "FilterSet":
        if not ds.augmented:
            raise ValueError("build the filter from an inverse-augmented dataset")
        return cls(ds.all_facts(), include_qualifiers)


def tie_rank(greater: int, ties: int) -> int:
    """Expected position among exact ties, rounded up to an integer rank."""
    return int(math.ceil(1 + greater + ties / 2))


def filtered_rank(scores: np.ndarray, truth: int, filtered: Iterable[int] = ()) -> int:
    """Rank of ``truth`` after removing the other known true objects.

    ``filtered`` is the set of true objects for the query key; the ground truth
    itself stays in the pool.  Ties with the truth count as half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    keep = np.ones(scores.shape[0], dtype=bool)
    drop = [e for e in filtered if e != truth]
    if drop:
        keep[np.asarray(drop, dtype=np.int64)] = False
    if not keep[truth]:
        raise FilterError(f"ground truth {truth} was filtered out")
    target = scores[truth]
    pool = scores[keep]
    greater = int(np.count_nonzero(pool > target))
    ties = int(np.count_nonzero(pool == target)) - 1
    return tie_rank(greater, ties)


def query_rank(scores: np.ndarray, query: LpQuery, filters: FilterSet | None) -> int:
    truths = filters.truths(query) if filters is not None else ()
    if filters is not None and query.ground_truth not in truths:
        raise FilterError(f"query {query} is missing from the filter set")
    return filtered_rank(scores, query.ground_truth, truths)


@dataclass
class RankReport:
    ranks: list[int] = field(default_factory=list)
    split: str = ""
    queries: list[LpQuery] | None = None

    @property
    def n_queries(self) -> int:
        return len(self.ranks)

    @property
    def mrr(self) -> float:
        if not self.ranks:
            return 0.0
        return float(np.mean(1.0 / np.asarray(self.ranks, dtype=np.float64)))

    def hits(self, k: int) -> float:
        if not self.ranks:
            return 0.0
        return float(np.mean(np.asarray(self.ranks) <= k))

    @property
    def hits1(self) -> float:
        return self.hits(1)

    @property
    def hits3(self) -> float:
        return self.hits(3)

    @property
    def hits10(self) -> float:
        return self.hits(10)

    def to_dict(self, per_query: bool = False) -> dict:
        out = {
            "split": self.split,
            "mrr": self.mrr,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
            "n_queries": self.n_queries,
        }
        if per_query:
            qs = self.queries or [None] * len(self.ranks)
            out["per_query"] = [
                {"query": None if q is None else _query_json(q), "rank": r} for q, r in zip(qs, self.ranks)
            ]
        return out

    def to_json(self, per_query: bool = False) -> str:
        return json.dumps(self.to_dict(per_query), indent=2)

    def table(self, label: str = "model") -> str:
        width = max(len(label), 5)
        head = f"{'Model':<{width}}  {'MRR':>6}  {'H@1':>6}  {'H@3':>6}  {'H@10':>6}  {'queries':>8}"
        row = (
            f"{label:<{width}}  {self.mrr:>6.3f}  {self.hits1:>6.3f}  {self.hits3:>6.3f}  "
            f"{self.hits10:>6.3f}  {self.n_queries:>8d}"
        )
        return head + "\n" + row


def _query_json(q: LpQuery) -> dict:
    return {
        "subject": q.subject,
        "relation": q.relation,
        "time": q.time,
        "qualifiers": [[x.relation, x.entity] for x in q.qualifiers],
        "ground_truth": q.ground_truth,
    }


def rank_queries(
    score_fn: Callable[[Sequence[LpQuery]], np.ndarray],
    queries: Sequence[LpQuery],
    filters: FilterSet | None,
    batch_size: int = 256,
    workers: int = 1,
) -> list[int]:
    """Ranks for ``queries`` under ``score_fn`` (a batch of queries to a score matrix).

    Batches are independent and may be spread over ``workers`` threads; the
    result order always follows ``queries``.
    """
    batches = [queries[lo : lo + batch_size] for lo in range(0, len(queries), batch_size)]

    def run(batch: Sequence[LpQuery]) -> list[int]:
        scores = np.asarray(score_fn(batch))
        return [query_rank(scores[i], q, filters) for i, q in enumerate(batch)]

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    return [r for part in parts for r in part]


def evaluate(
    model,
    ds: Dataset,
    split: str = "test",
    graph=None,
    include_qualifiers: bool = True,
    filtered: bool = True,
    batch_size: int = 256,
    workers: int = 1,
    seed: int = 0,
    keep_queries: bool = False,
) -> RankReport:
    """Rank every query derived from ``split`` with dropout off."""
    from . import autodiff as ad
    from .model import GraphContext

    if not ds.augmented:
        raise ValueError("evaluate expects an inverse-augmented dataset")
    graph = graph or GraphContext.from_dataset(ds, model.cfg)
    queries = derive_queries(ds.split(split))
    filters = FilterSet.from_dataset(ds, include_qualifiers) if filtered else None
    with ad.no_grad():
        h = model.encode(graph, None, np.random.default_rng(seed))

        def score_fn(batch):
            with ad.no_grad():
                return model.decoder.score_all(batch, h, graph.pool, graph.ti).data

        ranks = rank_queries(score_fn, queries, filters, batch_size, workers)
    return RankReport(ranks, split, queries if keep_queries else None)


def random_scorer_mrr(n_entities: int, n_queries: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo MRR of uniform random scores without filtering, and the analytic value."""
    rng = np.random.default_rng(seed)
    truths = rng.integers(0, n_entities, size=n_queries)
    ranks = [filtered_rank(rng.random(n_entities), int(t)) for t in truths]
    analytic = sum(1.0 / k for k in range(1, n_entities + 1)) / n_entities
    return float(np.mean(1.0 / np.asarray(ranks))), analytic
