"""HypeTKG: encoder + decoder + the observed-graph context they read from."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, HyperFact, LpQuery, TemporalNeighborIndex, TiFact, TiNeighborIndex
from .decoder import QMD, DecoderConfig, QueryTrace, SubjectQualifierPool
from .encoder import QATGE, EncoderConfig
from .nn import ParamStore


@dataclass
class ModelConfig:
    dim: int = 300
    layers: int = 2
    use_qualifiers: bool = True
    use_qual_attention: bool = True
    use_matcher: bool = True
    use_time: bool = True
    use_ti: bool = False
    neighbor_cap: int | None = 64
    ti_neighbor_cap: int | None = 64
    matcher_cap: int | None = 128
    dropout: float = 0.3
    gamma_init: float = 0.2
    beta_init: float = 0.1
    transformer_layers: int = 2
    transformer_heads: int = 4
    ff_mult: int = 2
    ti_inverse: bool = True
    unit_phase: bool = True
    # Init knobs: half-width of the uniform draw for entity/relation tables
    # (None keeps 1/sqrt(d)) and a multiplier on every other weight matrix.
    embedding_init: float | None = None
    weight_init_gain: float = 1.0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            dim=self.dim,
            layers=self.layers,
            use_qualifiers=self.use_qualifiers,
            use_qual_attention=self.use_qual_attention and self.use_qualifiers,
            use_time=self.use_time,
            use_ti=self.use_ti,
            neighbor_cap=self.neighbor_cap,
            ti_neighbor_cap=self.ti_neighbor_cap,
            dropout=self.dropout,
            gamma_init=self.gamma_init,
            beta_init=self.beta_init,
            unit_phase=self.unit_phase,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            dim=self.dim,
            use_qualifiers=self.use_qualifiers,
            use_matcher=self.use_matcher and self.use_qualifiers,
            use_time=self.use_time,
            use_ti=self.use_ti,
            transformer_layers=self.transformer_layers,
            transformer_heads=self.transformer_heads,
            ff_mult=self.ff_mult,
            dropout=self.dropout,
            matcher_cap=self.matcher_cap,
            ti_neighbor_cap=self.ti_neighbor_cap,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# Ablation presets: flag values each named variant pins.
PRESETS: dict[str, dict[str, bool]] = {
    "full": {},
    "psi": {"use_ti": True},
    "tau": {"use_time": False},
    "variant-a": {"use_qualifiers": False, "use_qual_attention": False, "use_matcher": False},
    "variant-b": {"use_qual_attention": False},
    "variant-c": {"use_matcher": False},
}


def apply_preset(cfg: ModelConfig, name: str) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(cfg, **PRESETS[name])


@dataclass
class GraphContext:
    """Everything read from the observed graph: neighbour indexes and qualifier pools."""

    temporal: TemporalNeighborIndex
    ti: TiNeighborIndex | None
    pool: SubjectQualifierPool

    @classmethod
    def build(
        cls,
        observed: Sequence[HyperFact],
        ti_facts: Sequence[TiFact],
        n_ti_relations: int,
        cfg: ModelConfig,
    ) -> "GraphContext":
        ti_list = list(ti_facts)
        if cfg.ti_inverse:
            ti_list += [TiFact(f.object, f.relation + n_ti_relations, f.subject) for f in ti_facts]
        return cls(
            temporal=TemporalNeighborIndex(observed),
            ti=TiNeighborIndex(ti_list) if cfg.use_ti else None,
            pool=SubjectQualifierPool(observed, cfg.matcher_cap, by_recency=cfg.use_time),
        )

    @classmethod
    def from_dataset(cls, ds: Dataset, cfg: ModelConfig) -> "GraphContext":
        if not ds.augmented:
            raise ValueError("GraphContext expects an inverse-augmented dataset")
        return cls.build(ds.train, ds.ti_facts, ds.n_ti_relations, cfg)


class HypeTKG:
    def __init__(
        self,
        cfg: ModelConfig,
        n_entities: int,
        n_candidates: int,
        n_relations: int,
        n_ti_relations: int = 0,
        seed: int = 0,
    ):
        self.cfg = cfg
        self.n_candidates = n_candidates
        self.store = ParamStore(seed)
        n_ti_rows = n_ti_relations * (2 if cfg.ti_inverse else 1) if cfg.use_ti else 0
        self.encoder = QATGE(
            self.store, cfg.encoder_config(), n_entities, n_relations + n_ti_rows, ti_relation_offset=n_relations
        )
        self.decoder = QMD(self.store, cfg.decoder_config(), self.encoder, n_candidates)
        self._rescale_init()

    def _rescale_init(self) -> None:
        tables = {"entity", "relation"}
        if self.cfg.embedding_init is not None:
            factor = self.cfg.embedding_init * np.sqrt(self.cfg.dim)
            for name in tables:
                self.store[name].data *= factor
        if self.cfg.weight_init_gain != 1.0:
            for p in self.store:
                if p.name not in tables and p.data.ndim == 2:
                    p.data *= self.cfg.weight_init_gain

    @classmethod
    def for_dataset(cls, ds: Dataset, cfg: ModelConfig, seed: int = 0) -> "HypeTKG":
        if not ds.augmented:
            raise ValueError("build the model from an inverse-augmented dataset")
        return cls(cfg, ds.n_all_entities, ds.n_entities, ds.n_relations, ds.n_ti_relations, seed)

    @property
    def params(self) -> list[ad.Parameter]:
        return list(self.store)

    def encode(
        self,
        graph: GraphContext,
        rng: np.random.Generator | None = None,
        sample_rng: np.random.Generator | None = None,
    ) -> Tensor:
        return self.encoder.encode_all(graph.temporal, graph.ti, None, rng, sample_rng)

    def scores(
        self,
        queries: Sequence[LpQuery],
        graph: GraphContext,
        rng: np.random.Generator | None = None,
        sample_rng: np.random.Generator | None = None,
        h: Tensor | None = None,
        trace: QueryTrace | None = None,
    ) -> Tensor:
        """(B, n_candidates) raw scores; encodes the graph unless ``h`` is given."""
        if h is None:
            h = self.encode(graph, rng, sample_rng)
        return self.decoder.score_all(queries, h, graph.pool, graph.ti, rng, trace)

    def predict(
        self,
        queries: Sequence[LpQuery],
        graph: GraphContext,
        batch_size: int = 256,
        seed: int = 0,
    ) -> np.ndarray:
        """Deterministic (no dropout) scores as a plain array."""
        out = np.empty((len(queries), self.n_candidates))
        with ad.no_grad():
            h = self.encode(graph, None, np.random.default_rng(seed))
            for lo in range(0, len(queries), batch_size):
                batch = queries[lo : lo + batch_size]
                out[lo : lo + len(batch)] = self.decoder.score_all(batch, h, graph.pool, graph.ti).data
        return out
