"""Qualifier matching decoder.

For a query ``((s, r, ?, t), Q)`` the decoder builds a query feature from

* the query qualifiers, read by a qualifier-wise Transformer,
* a global qualifier feature, an attention-weighted sum over every qualifier
  attached to observed facts whose subject is ``s`` (the matcher),
* optionally ``s``'s time-invariant neighbours, read by a TI-wise Transformer,

all fed with ``f_t(h_s || h_t)`` and ``h_r`` to a query-wise Transformer.  The
score of candidate ``c`` is ``(h_que * h_t)^T W5 h_c``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import HyperFact, LpQuery, Qualifier, TiNeighborIndex
from .encoder import QATGE
from .nn import ParamStore, TransformerEncoder, pad_sequences

# Additive token-type embeddings (no positional encodings anywhere).
TOKEN_TYPES = (
    "subject_time",
    "relation",
    "qual_relation",
    "qual_entity",
    "query_qual",
    "global_qual",
    "ti_relation",
    "ti_entity",
    "ti_feature",
)
_TYPE = {name: i for i, name in enumerate(TOKEN_TYPES)}


@dataclass
class DecoderConfig:
    dim: int = 300
    use_qualifiers: bool = True
    use_matcher: bool = True
    use_time: bool = True
    use_ti: bool = False
    transformer_layers: int = 2
    transformer_heads: int = 4
    ff_mult: int = 2
    dropout: float = 0.3
    matcher_cap: int | None = 128
    ti_neighbor_cap: int | None = 64


class SubjectQualifierPool:
    """subject -> qualifiers of all observed facts with that subject.

    Pools longer than ``cap`` keep the most recent facts first, then file order
    (file order only when ``by_recency`` is False).
    """

    def __init__(self, facts: Iterable[HyperFact], cap: int | None = 128, by_recency: bool = True):
        rows: dict[int, list[tuple[int, int, Qualifier]]] = defaultdict(list)
        for order, f in enumerate(facts):
            for q in f.qualifiers:
                rows[f.subject].append((f.time, order, q))
        self._pool: dict[int, list[Qualifier]] = {}
        for s, items in rows.items():
            if cap is not None and len(items) > cap:
                key = (lambda it: (-it[0], it[1])) if by_recency else (lambda it: it[1])
                items = sorted(items, key=key)[:cap]
            self._pool[s] = [q for _, _, q in items]

    def __getitem__(self, subject: int) -> list[Qualifier]:
        return self._pool.get(subject, [])

    def total(self) -> int:
        return sum(len(v) for v in self._pool.values())


@dataclass
class QueryTrace:
    """Intermediate values kept for attention dumps."""

    eta: list[np.ndarray] = field(default_factory=list)
    pools: list[list[Qualifier]] = field(default_factory=list)
    ti_neighbors: list[list[tuple[int, int]]] = field(default_factory=list)


class QMD:
    def __init__(self, store: ParamStore, cfg: DecoderConfig, encoder: QATGE, n_candidates: int):
        if cfg.dim != encoder.cfg.dim:
            raise ValueError("decoder and encoder dimensions differ")
        self.cfg = cfg
        self.encoder = encoder
        self.n_candidates = n_candidates
        d = cfg.dim
        scale = 1.0 / np.sqrt(d)
        self.types = store.uniform("qmd.type", (len(TOKEN_TYPES), d), scale)
        self.cls_query = store.uniform("qmd.cls.query", (d,), scale)
        self.w5 = store.uniform("qmd.w5", (d, d), scale)
        tf = dict(dim=d, layers=cfg.transformer_layers, heads=cfg.transformer_heads, ff_mult=cfg.ff_mult)
        self.query_tf = TransformerEncoder(store, "qmd.query_tf", **tf)
        if cfg.use_qualifiers:
            self.cls_qual = store.uniform("qmd.cls.qual", (d,), scale)
            self.qual_tf = TransformerEncoder(store, "qmd.qual_tf", **tf)
            if cfg.use_matcher:
                self.w3 = store.uniform("qmd.w3", (d, 2 * d), scale)
                self.w4 = store.uniform("qmd.w4", (d, 2 * d), scale)
        if cfg.use_ti:
            self.cls_ti = store.uniform("qmd.cls.ti", (d,), scale)
            self.ti_tf = TransformerEncoder(store, "qmd.ti_tf", **tf)

    # -- helpers ---------------------------------------------------------------
    def _typed(self, x: Tensor, kind: str) -> Tensor:
        row = self.types[_TYPE[kind]]
        return ad.add(x, ad.broadcast_to(row.reshape(1, self.cfg.dim), x.shape))

    def _pair_sequences(
        self,
        cls: Tensor,
        pairs: Sequence[Sequence[tuple[int, int]]],
        h: Tensor,
        rel_kind: str,
        ent_kind: str,
        transformer: TransformerEncoder,
        rng: np.random.Generator | None,
    ) -> Tensor:
        """CLS output of ``[CLS, r1, e1, r2, e2, ...]`` for each list of (relation, entity) pairs."""
        d = self.cfg.dim
        b = len(pairs)
        rels = np.array([r for seq in pairs for r, _ in seq], dtype=np.int64)
        ents = np.array([e for seq in pairs for _, e in seq], dtype=np.int64)
        n = rels.size
        pieces = [cls.reshape(1, d)]
        if n:
            pieces.append(self._typed(ad.gather(self.encoder.relation, rels), rel_kind))
            pieces.append(self._typed(ad.gather(h, ents), ent_kind))
        pieces.append(ad.Tensor(np.zeros((1, d))))
        table = ad.concat(pieces, axis=0)
        pad_row = 1 + 2 * n
        lengths = [1 + 2 * len(seq) for seq in pairs]
        mask, width = pad_sequences(lengths)
        idx = np.full((b, width), pad_row, dtype=np.int64)
        offset = 0
        for i, seq in enumerate(pairs):
            idx[i, 0] = 0
            k = len(seq)
            idx[i, 1 : 1 + 2 * k : 2] = 1 + offset + np.arange(k)
            idx[i, 2 : 2 + 2 * k : 2] = 1 + n + offset + np.arange(k)
            offset += k
        tokens = ad.gather(table, idx.reshape(-1)).reshape(b, width, d)
        return transformer(tokens, mask, self.cfg.dropout, rng)

    def subject_time(self, h: Tensor, subjects: np.ndarray, times: np.ndarray) -> Tensor:
        return self.encoder.time_aware(ad.gather(h, subjects), times)

    def query_qualifier_feature(self, queries: Sequence[LpQuery], h: Tensor, rng=None) -> Tensor:
        pairs = [[(q.relation, q.entity) for q in query.qualifiers] for query in queries]
        return self._pair_sequences(self.cls_qual, pairs, h, "qual_relation", "qual_entity", self.qual_tf, rng)

    def ti_feature(self, subjects: Sequence[int], h: Tensor, ti_index: TiNeighborIndex, rng=None, trace=None) -> Tensor:
        offset = self.encoder.ti_relation_offset
        pairs = []
        for s in subjects:
            nbrs = list(ti_index[int(s)])
            cap = self.cfg.ti_neighbor_cap
            if cap is not None and len(nbrs) > cap:
                nbrs = nbrs[:cap]
            if trace is not None:
                trace.ti_neighbors.append(nbrs)
            pairs.append([(r + offset, e) for e, r in nbrs])
        return self._pair_sequences(self.cls_ti, pairs, h, "ti_relation", "ti_entity", self.ti_tf, rng)

    def global_qualifier_feature(
        self,
        queries: Sequence[LpQuery],
        h: Tensor,
        h_st: Tensor,
        h_r: Tensor,
        pool: SubjectQualifierPool,
        trace: QueryTrace | None = None,
    ) -> Tensor:
        """Attention over every qualifier of observed facts sharing the query subject."""
        d = self.cfg.dim
        b = len(queries)
        owner, rels, ents = [], [], []
        for i, query in enumerate(queries):
            quals = pool[query.subject]
            if trace is not None:
                trace.pools.append(list(quals))
            for q in quals:
                owner.append(i)
                rels.append(q.relation)
                ents.append(q.entity)
        if not owner:
            if trace is not None:
                trace.eta.extend(np.zeros(0) for _ in queries)
            return ad.Tensor(np.zeros((b, d)))
        owner = np.asarray(owner, dtype=np.int64)
        keys = ad.linear(
            ad.concat([ad.gather(self.encoder.relation, rels), ad.gather(h, ents)], axis=-1), self.w3
        )
        probe = ad.linear(ad.concat([h_st, h_r], axis=-1), self.w4)
        logits = ad.mul(keys, ad.gather(probe, owner)).sum(axis=-1).reshape(-1, 1)
        eta = ad.segment_softmax(logits, owner, b)
        if trace is not None:
            for i in range(b):
                trace.eta.append(eta.data[owner == i, 0].copy())
        weighted = ad.mul(keys, ad.broadcast_to(eta, keys.shape))
        return ad.segment_sum(weighted, owner, b)

    # -- query feature and scores ---------------------------------------------------
    def query_feature(
        self,
        queries: Sequence[LpQuery],
        h: Tensor,
        pool: SubjectQualifierPool,
        ti_index: TiNeighborIndex | None = None,
        rng: np.random.Generator | None = None,
        trace: QueryTrace | None = None,
    ) -> Tensor:
        cfg = self.cfg
        d = cfg.dim
        b = len(queries)
        subjects = np.array([q.subject for q in queries], dtype=np.int64)
        relations = np.array([q.relation for q in queries], dtype=np.int64)
        times = np.array([q.time for q in queries], dtype=np.int64)
        h_st = self.subject_time(h, subjects, times)
        h_r = ad.gather(self.encoder.relation, relations)
        tokens = [
            ad.broadcast_to(self.cls_query.reshape(1, d), (b, d)),
            self._typed(h_st, "subject_time"),
            self._typed(h_r, "relation"),
        ]
        if cfg.use_qualifiers:
            tokens.append(self._typed(self.query_qualifier_feature(queries, h, rng), "query_qual"))
            if cfg.use_matcher:
                glo = self.global_qualifier_feature(queries, h, h_st, h_r, pool, trace)
            else:
                glo = ad.Tensor(np.zeros((b, d)))
            tokens.append(self._typed(glo, "global_qual"))
        if cfg.use_ti:
            if ti_index is None:
                raise ValueError("TI modelling is on but no TI index was given")
            tokens.append(self._typed(self.ti_feature(subjects, h, ti_index, rng, trace), "ti_feature"))
        seq = ad.stack(tokens, axis=1)
        return self.query_tf(seq, None, cfg.dropout, rng)

    def score_from_feature(self, h_que: Tensor, times: np.ndarray, h: Tensor) -> Tensor:
        """(B, n_candidates) scores ``(h_que * h_t)^T W5 h_c`` for every candidate."""
        left = h_que
        if self.cfg.use_time:
            left = ad.mul(h_que, self.encoder.time_features(times))
        cand = ad.gather(h, np.arange(self.n_candidates))
        return ad.matmul(ad.matmul(left, self.w5), cand.T)

    def score_all(
        self,
        queries: Sequence[LpQuery],
        h: Tensor,
        pool: SubjectQualifierPool,
        ti_index: TiNeighborIndex | None = None,
        rng: np.random.Generator | None = None,
        trace: QueryTrace | None = None,
    ) -> Tensor:
        h_que = self.query_feature(queries, h, pool, ti_index, rng, trace)
        times = np.array([q.time for q in queries], dtype=np.int64)
        return self.score_from_feature(h_que, times, h)

    def score(
        self,
        query: LpQuery,
        candidate: int,
        h: Tensor,
        pool: SubjectQualifierPool,
        ti_index: TiNeighborIndex | None = None,
    ) -> Tensor:
        """Score of a single candidate, computed without the 1-vs-all product."""
        if not 0 <= candidate < self.n_candidates:
            raise IndexError(f"candidate {candidate} out of range [0, {self.n_candidates})")
        h_que = self.query_feature([query], h, pool, ti_index).reshape(self.cfg.dim)
        left = h_que
        if self.cfg.use_time:
            left = ad.mul(h_que, self.encoder.time_features(np.array([query.time])).reshape(self.cfg.dim))
        return ad.matmul(ad.matmul(left, self.w5), ad.gather(h, np.array([candidate])).reshape(self.cfg.dim))
