"""Qualifier-attentional time-aware graph encoder.

Entity representations are built by gated aggregation over temporal
neighbours.  Each neighbour's qualifiers are fused by element-wise attention
against the neighbour's relation, and neighbour subjects are made time aware
with a learned cosine time encoding.  Optionally, time-invariant neighbours
are mixed in through a second gate.

All computations are batched over edges: one row per (target, neighbour) edge
and one row per qualifier, with segment reductions doing the per-entity and
per-edge sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import NeighborArrays, TemporalNeighbor, TemporalNeighborIndex, TiNeighborIndex
from .nn import ParamStore


@dataclass
class EncoderConfig:
    dim: int = 300
    layers: int = 2
    use_qualifiers: bool = True
    use_qual_attention: bool = True
    use_time: bool = True
    use_ti: bool = False
    neighbor_cap: int | None = 64
    ti_neighbor_cap: int | None = 64
    dropout: float = 0.3
    gamma_init: float = 0.2
    beta_init: float = 0.1
    unit_phase: bool = True

    def validate(self) -> None:
        if self.dim % 2:
            raise ValueError(f"embedding dimension must be even, got {self.dim}")
        if self.layers not in (1, 2):
            raise ValueError(f"layers must be 1 or 2, got {self.layers}")


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------
def phi(a, b, w1, unit_phase: bool = True) -> Tensor:
    """``W1(a||b) * rotate(a, b) * (a + b)``, batched over leading axes."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ad.ShapeError(f"phi: shapes {a.shape} and {b.shape} differ")
    lin = ad.linear(ad.concat([a, b], axis=-1), w1)
    rot = ad.complex_rotate(a, b, unit_phase=unit_phase)
    return ad.mul(ad.mul(lin, rot), ad.add(a, b))


def _bcast_rows(x: Tensor, n: int, d: int) -> Tensor:
    return ad.broadcast_to(x.reshape(1, d), (n, d))


def qualifier_attention_segments(
    quals: Tensor,
    rel_per_qual: Tensor,
    w: Tensor,
    w_qual: Tensor,
    owner: np.ndarray,
    n_owners: int,
) -> tuple[Tensor, Tensor]:
    """Fuse qualifier reps per owning edge.

    ``quals`` (Q, d) are the qualifier reps, ``rel_per_qual`` (Q, d) the primary
    relation of the owning edge.  Returns the fused feature (n_owners, d) and the
    attention matrix (Q, d), whose columns sum to 1 within every owner.
    """
    n, d = quals.shape
    score = ad.mul(quals, rel_per_qual).sum(axis=-1).reshape(n, 1)
    logits = ad.mul(ad.broadcast_to(score, (n, d)), _bcast_rows(w, n, d))
    att = ad.segment_softmax(logits, owner, n_owners)
    fused = ad.segment_sum(ad.linear(ad.mul(att, quals), w_qual), owner, n_owners)
    return fused, att


def qualifier_attention(quals: Sequence[Tensor], r_prime, w, w_qual) -> Tensor:
    """Attention-fused feature of one neighbour's qualifiers (K >= 1)."""
    if len(quals) == 0:
        raise ValueError("qualifier_attention needs at least one qualifier")
    stacked = ad.stack(list(quals), axis=0)
    k, d = stacked.shape
    rel = _bcast_rows(ad.as_tensor(r_prime), k, d)
    fused, _ = qualifier_attention_segments(stacked, rel, w, w_qual, np.zeros(k, dtype=np.int64), 1)
    return fused.reshape(d)


def attention_weights(quals: Sequence[Tensor], r_prime, w) -> np.ndarray:
    """The (K, d) attention matrix used by :func:`qualifier_attention`."""
    stacked = ad.stack(list(quals), axis=0)
    k, d = stacked.shape
    rel = _bcast_rows(ad.as_tensor(r_prime), k, d)
    dummy = ad.Tensor(np.eye(d))
    _, att = qualifier_attention_segments(stacked, rel, w, dummy, np.zeros(k, dtype=np.int64), 1)
    return att.data


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------
@dataclass
class TiEdges:
    target: np.ndarray
    source: np.ndarray
    relation: np.ndarray


class QATGE:
    """Parameters and forward pass of the graph encoder.

    ``n_relations`` is the full relation table size (HTKG relations, their
    inverses and any TI relations); ``ti_relation_offset`` maps a TI relation
    id into that table.
    """

    def __init__(
        self,
        store: ParamStore,
        cfg: EncoderConfig,
        n_entities: int,
        n_relations: int,
        ti_relation_offset: int = 0,
    ):
        cfg.validate()
        self.cfg = cfg
        self.n_entities = n_entities
        self.ti_relation_offset = ti_relation_offset
        d = cfg.dim
        scale = 1.0 / np.sqrt(d)
        self.entity = store.uniform("entity", (n_entities, d), scale)
        self.relation = store.uniform("relation", (n_relations, d), scale)
        self.omega = store.uniform("time.omega", (d,), scale)
        self.phase = store.uniform("time.phase", (d,), scale)
        self.ft_w = store.uniform("time.ft.weight", (d, 2 * d), scale)
        self.ft_b = store.constant("time.ft.bias", (d,), 0.0)
        self.gamma = store.constant("gate.gamma", (), cfg.gamma_init)
        self.beta = store.constant("gate.beta", (), cfg.beta_init) if cfg.use_ti else None
        self.layers = []
        for i in range(cfg.layers):
            p = f"qatge.{i}"
            layer = {
                "w1": store.uniform(f"{p}.w1", (d, 2 * d), scale),
                "w_qual": store.uniform(f"{p}.w_qual", (d, d), scale),
                "w2": store.uniform(f"{p}.w2", (d, d), scale),
                "w": store.uniform(f"{p}.w", (d,), scale),
            }
            if cfg.use_ti:
                layer["w_psi"] = store.uniform(f"{p}.w_psi", (d, d), scale)
            self.layers.append(layer)

    # -- time --------------------------------------------------------------
    def time_features(self, times: np.ndarray) -> Tensor:
        """``sqrt(1/d) * cos(omega * t + phase)`` for each integer time id."""
        d = self.cfg.dim
        t = np.asarray(times, dtype=np.float64).reshape(-1, 1)
        n = t.shape[0]
        arg = ad.add(ad.matmul(ad.Tensor(t), self.omega.reshape(1, d)), _bcast_rows(self.phase, n, d))
        return ad.mul(ad.cos(arg), np.sqrt(1.0 / d))

    def time_aware(self, h: Tensor, times: np.ndarray) -> Tensor:
        """``f_t(h || h_t)``; identity when time modelling is off."""
        if not self.cfg.use_time:
            return h
        return ad.tanh(ad.linear(ad.concat([h, self.time_features(times)], axis=-1), self.ft_w, self.ft_b))

    # -- one layer -----------------------------------------------------------
    def layer(
        self,
        index: int,
        h_prev: Tensor,
        targets: np.ndarray,
        nb: NeighborArrays,
        ti: TiEdges | None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """New representations (len(targets), d) for ``targets`` given layer inputs ``h_prev``."""
        cfg, prm = self.cfg, self.layers[index]
        d = cfg.dim
        targets = np.asarray(targets, dtype=np.int64)
        n_t = targets.size
        row_of = np.full(self.n_entities, -1, dtype=np.int64)
        row_of[targets] = np.arange(n_t)
        fallback = ad.gather(h_prev, targets)
        out = fallback
        drop_rng = rng if cfg.dropout > 0 else None

        n_edges = nb.target.size
        if n_edges:
            seg = row_of[nb.target]
            h_src = self.time_aware(ad.gather(h_prev, nb.source), nb.time)
            h_rel = ad.gather(self.relation, nb.relation)
            rel_side = h_rel
            if cfg.use_qualifiers and nb.qual_edge.size:
                hq = phi(
                    ad.gather(self.entity, nb.qual_entity),
                    ad.gather(self.relation, nb.qual_relation),
                    prm["w1"],
                    cfg.unit_phase,
                )
                if cfg.use_qual_attention:
                    fused, _ = qualifier_attention_segments(
                        hq, ad.gather(h_rel, nb.qual_edge), prm["w"], prm["w_qual"], nb.qual_edge, n_edges
                    )
                else:
                    fused = ad.segment_mean(ad.linear(hq, prm["w_qual"]), nb.qual_edge, n_edges)
                has_q = np.bincount(nb.qual_edge, minlength=n_edges)[:, None] > 0
                rel_side = ad.where(has_q, ad.blend(self.gamma, fused, h_rel), h_rel)
            msg = ad.linear(phi(h_src, rel_side, prm["w1"], cfg.unit_phase), prm["w2"])
            agg = ad.dropout(ad.segment_mean(msg, seg, n_t), cfg.dropout, drop_rng)
            has_nb = np.bincount(seg, minlength=n_t)[:, None] > 0
            out = ad.where(has_nb, agg, fallback)

        if cfg.use_ti and ti is not None and ti.target.size:
            seg_ti = row_of[ti.target]
            msg_ti = ad.linear(
                phi(ad.gather(h_prev, ti.source), ad.gather(self.relation, ti.relation), prm["w1"], cfg.unit_phase),
                prm["w_psi"],
            )
            h_psi = ad.dropout(ad.segment_mean(msg_ti, seg_ti, n_t), cfg.dropout, drop_rng)
            has_ti = np.bincount(seg_ti, minlength=n_t)[:, None] > 0
            out = ad.where(has_ti, ad.blend(self.beta, h_psi, out), out)
        return out

    def neighbor_attention(
        self, entity: int, temporal: TemporalNeighborIndex, layer: int = 0
    ) -> list[tuple[TemporalNeighbor, np.ndarray]]:
        """Qualifier attention (K, d) for each qualifier-bearing temporal neighbour of ``entity``."""
        if not (self.cfg.use_qualifiers and self.cfg.use_qual_attention):
            return []
        prm = self.layers[layer]
        nbrs = [n for n in temporal[entity] if n.qualifiers]
        out = []
        with ad.no_grad():
            for n in nbrs:
                hq = phi(
                    ad.gather(self.entity, np.array([q.entity for q in n.qualifiers])),
                    ad.gather(self.relation, np.array([q.relation for q in n.qualifiers])),
                    prm["w1"],
                    self.cfg.unit_phase,
                )
                k = len(n.qualifiers)
                rel = ad.gather(self.relation, np.full(k, n.relation))
                _, att = qualifier_attention_segments(
                    hq, rel, prm["w"], prm["w_qual"], np.zeros(k, dtype=np.int64), 1
                )
                out.append((n, att.data))
        return out

    # -- neighbourhoods --------------------------------------------------------
    def ti_edges(
        self, ti_index: TiNeighborIndex | None, targets: np.ndarray, rng: np.random.Generator | None
    ) -> TiEdges | None:
        if not self.cfg.use_ti or ti_index is None:
            return None
        tgt, src, rel = [], [], []
        cap = self.cfg.ti_neighbor_cap
        for e in targets:
            nbrs = ti_index[int(e)]
            if cap is not None and len(nbrs) > cap:
                gen = rng if rng is not None else np.random.default_rng(int(e))
                keep = np.sort(gen.choice(len(nbrs), size=cap, replace=False))
                nbrs = [nbrs[i] for i in keep]
            for s, r in nbrs:
                tgt.append(int(e))
                src.append(s)
                rel.append(r + self.ti_relation_offset)
        as_int = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
        return TiEdges(as_int(tgt), as_int(src), as_int(rel))

    def encode_all(
        self,
        temporal: TemporalNeighborIndex,
        ti_index: TiNeighborIndex | None = None,
        targets: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        sample_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Full (n_entities, d) table after all layers.

        Only ``targets`` (default: every entity) and the neighbours they need at
        earlier layers are recomputed; other rows keep their base embedding.
        ``rng`` drives dropout; ``sample_rng`` drives neighbour capping (defaults
        to ``rng``).
        """
        cfg = self.cfg
        sample_rng = sample_rng if sample_rng is not None else rng
        final = np.arange(self.n_entities) if targets is None else np.unique(np.asarray(targets, dtype=np.int64))
        plans: list[tuple[np.ndarray, NeighborArrays, TiEdges | None]] = []
        need = final
        for _ in range(cfg.layers):
            nb = temporal.arrays(need.tolist(), cfg.neighbor_cap, sample_rng)
            ti = self.ti_edges(ti_index, need, sample_rng)
            plans.append((need, nb, ti))
            extra = [nb.source] + ([ti.source] if ti is not None else [])
            need = np.unique(np.concatenate([need] + extra))
        plans.reverse()

        h = self.entity
        for i, (tg, nb, ti) in enumerate(plans):
            rows = self.layer(i, h, tg, nb, ti, rng)
            is_target = np.zeros(self.n_entities, dtype=bool)
            is_target[tg] = True
            h = ad.where(is_target[:, None], ad.segment_sum(rows, tg, self.n_entities), h)
        return h


def encode_entity(
    encoder: QATGE,
    entity: int,
    layer_input: Tensor,
    temporal: TemporalNeighborIndex,
    ti_index: TiNeighborIndex | None = None,
    layer: int = 0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """One layer's representation (d,) of ``entity`` from ``layer_input`` rows."""
    targets = np.array([entity], dtype=np.int64)
    nb = temporal.arrays([entity], encoder.cfg.neighbor_cap, rng)
    ti = encoder.ti_edges(ti_index, targets, rng)
    return encoder.layer(layer, layer_input, targets, nb, ti, rng).reshape(encoder.cfg.dim)
