"""Benchmark reconstruction: quadruple TKG in, HTKG dataset directory out."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import DataFormatError
from .client import WikidataClient
from .extract import fetch_qualifiers, mine_ti_facts
from .mapping import TI_RELATIONS, YAGO_TO_WIKIDATA, Quadruple, RelationMapping, map_relations

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
QID = re.compile(r"^Q\d+$")
PID = re.compile(r"^P\d+$")


def read_quadruples(path: str | Path) -> list[Quadruple]:
    """``s<TAB>r<TAB>o<TAB>t`` per line; blank and ``#`` lines are skipped."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise DataFormatError(f"{path.name}:{lineno}: expected 4 columns, got {len(cols)}")
            out.append(Quadruple(*cols))
    return out


def split_sizes(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` items to ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.ndim != 1 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    exact = ratios * total
    sizes = np.floor(exact).astype(np.int64)
    short = total - int(sizes.sum())
    # Stable order on equal remainders: earlier splits first.
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes.tolist()


def redistribute_splits(
    splits: dict[str, list[Quadruple]],
    ratios: Sequence[float] | None = None,
    seed: int = 0,
) -> dict[str, list[Quadruple]]:
    """Pool all facts, shuffle under ``seed`` and cut them into new splits.

    ``ratios`` defaults to the source split proportions, which reproduces the
    source split sizes exactly.
    """
    pooled = [f for name in SPLITS for f in splits.get(name, [])]
    if ratios is None:
        total = max(len(pooled), 1)
        ratios = [len(splits.get(name, [])) / total for name in SPLITS]
    sizes = split_sizes(len(pooled), ratios)
    order = np.random.default_rng(seed).permutation(len(pooled))
    out, lo = {}, 0
    for name, n in zip(SPLITS, sizes):
        out[name] = [pooled[i] for i in order[lo : lo + n]]
        lo += n
    return out


@dataclass
class BuildConfig:
    source: Path
    out: Path
    map_yago_relations: bool = False
    redistribute: bool = False
    ratios: tuple[float, float, float] | None = None
    seed: int = 0
    resolve_labels: bool = True
    mine_ti: bool = True
    workers: int = 4
    ti_relations: tuple[tuple[str, str], ...] = TI_RELATIONS
    mapping: RelationMapping = field(default_factory=lambda: YAGO_TO_WIKIDATA)


@dataclass
class BuildReport:
    counts: dict[str, int]
    n_with_qualifiers: int
    n_ti_facts: int
    unresolved: list[str]
    dropped_ti_relations: list[str]

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "n_with_qualifiers": self.n_with_qualifiers,
            "n_ti_facts": self.n_ti_facts,
            "unresolved": self.unresolved,
            "dropped_ti_relations": self.dropped_ti_relations,
        }


def _normalize_label(token: str) -> str:
    return token.replace("_", " ")


def build_benchmark(cfg: BuildConfig, client: WikidataClient) -> BuildReport:
    source = Path(cfg.source)
    splits = {name: read_quadruples(source / f"{name}.txt") for name in SPLITS}
    if cfg.map_yago_relations:
        splits = {name: map_relations(facts, cfg.mapping) for name, facts in splits.items()}
    if cfg.redistribute:
        splits = redistribute_splits(splits, cfg.ratios, cfg.seed)

    # Resolve entity labels to QIDs, in first-seen order.
    resolved: dict[str, str] = {}
    unresolved: list[str] = []
    for name in SPLITS:
        for f in splits[name]:
            for tok in (f.subject, f.object):
                if tok in resolved or tok in unresolved:
                    continue
                if QID.match(tok):
                    resolved[tok] = tok
                elif cfg.resolve_labels:
                    qid = client.search_entity(_normalize_label(tok))
                    if qid is None:
                        unresolved.append(tok)
                    else:
                        resolved[tok] = qid
                else:
                    unresolved.append(tok)
    ent = lambda tok: resolved.get(tok, tok)  # noqa: E731
    splits = {
        name: [Quadruple(ent(f.subject), f.relation, ent(f.object), f.time) for f in facts]
        for name, facts in splits.items()
    }

    def lookup(f: Quadruple) -> list[tuple[str, str]]:
        if not (QID.match(f.subject) and QID.match(f.object) and PID.match(f.relation)):
            return []
        return fetch_qualifiers(f, client)

    quals: dict[str, list[list[tuple[str, str]]]] = {}
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        for name in SPLITS:
            quals[name] = list(pool.map(lookup, splits[name]))

    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    for name in SPLITS:
        for f, qs in zip(splits[name], quals[name]):
            entities.setdefault(f.subject)
            relations.setdefault(f.relation)
            entities.setdefault(f.object)
            for p, e in qs:
                relations.setdefault(p)
                entities.setdefault(e)

    ti_rel = [(label, pid) for label, pid in cfg.ti_relations if pid not in relations]
    dropped = [pid for _, pid in cfg.ti_relations if pid in relations]
    ti_facts: list[tuple[str, str, str]] = []
    if cfg.mine_ti and ti_rel:
        primary = {(f.subject, f.relation, f.object) for facts in splits.values() for f in facts}
        ti_facts = mine_ti_facts([e for e in entities if QID.match(e)], client, ti_rel, primary)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        lines = []
        for f, qs in zip(splits[name], quals[name]):
            cols = [f.subject, f.relation, f.object, f.time]
            for p, e in qs:
                cols += [p, e]
            lines.append("\t".join(cols) + "\n")
        (out / f"{name}.txt").write_text("".join(lines), encoding="utf-8")
    ti_entities = {e: None for s, _, o in ti_facts for e in (s, o) if e not in entities}
    if ti_facts:
        (out / "ti.txt").write_text("".join("\t".join(t) + "\n" for t in ti_facts), encoding="utf-8")
    report = BuildReport(
        counts={name: len(splits[name]) for name in SPLITS},
        n_with_qualifiers=sum(1 for name in SPLITS for qs in quals[name] if qs),
        n_ti_facts=len(ti_facts),
        unresolved=unresolved,
        dropped_ti_relations=dropped,
    )
    manifest = {
        "entities": list(entities),
        "ti_entities": list(ti_entities),
        "relations": list(relations),
        "ti_relations": sorted({r for _, r, _ in ti_facts}, key=[p for _, p in cfg.ti_relations].index),
        "labels": resolved,
        "settings": {
            "map_yago_relations": cfg.map_yago_relations,
            "redistribute": cfg.redistribute,
            "ratios": None if cfg.ratios is None else list(cfg.ratios),
            "seed": cfg.seed,
        },
        **report.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("built %s: %s", out, report.to_dict())
    return report
