"""Hyper-relational temporal KG data: facts, vocabularies, file I/O and indexes.

Fact files are UTF-8, tab separated, one fact per line::

    s  r  o  t  [rq1  eq1  [rq2  eq2 ...]]

Lines starting with ``#`` are comments.  The optional TI file holds ``s r o``
triples.  Timestamps must be integers (years); they are mapped to consecutive
ids in chronological order.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
INVERSE_SUFFIX = "^-1"


class DataFormatError(ValueError):
    """Malformed input file; message carries file name and line number."""


@dataclass(frozen=True)
class Qualifier:
    relation: int
    entity: int


@dataclass(frozen=True)
class HyperFact:
    subject: int
    relation: int
    object: int
    time: int
    qualifiers: tuple[Qualifier, ...] = ()

    @property
    def has_qualifiers(self) -> bool:
        return bool(self.qualifiers)


@dataclass(frozen=True)
class TiFact:
    subject: int
    relation: int
    object: int


@dataclass(frozen=True)
class LpQuery:
    """Object-prediction query ``((s, r, ?, t), Q)``; ``ground_truth`` is only used for scoring."""

    subject: int
    relation: int
    time: int
    qualifiers: tuple[Qualifier, ...]
    ground_truth: int


class Vocab:
    """Bijection between strings and dense ids, in insertion order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._tokens: list[str] = []
        for tok in tokens:
            if tok in self._ids:
                raise DataFormatError(f"duplicate vocabulary entry {tok!r}")
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._ids[token] = idx
            self._tokens.append(token)
        return idx

    def id(self, token: str) -> int:
        return self._ids[token]

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def get(self, token: str) -> int | None:
        return self._ids.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self._tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)

    def tokens(self) -> list[str]:
        return list(self._tokens)

    def copy(self) -> "Vocab":
        return Vocab(self._tokens)


@dataclass
class DatasetStats:
    n_train: int
    n_valid: int
    n_test: int
    n_entities_pri: int
    n_entities_qual: int
    n_relations_pri: int
    n_relations_qual: int
    n_timestamps: int
    n_facts_with_qual: int
    avg_quals_per_qual_fact: float
    qual_percent: float
    n_ti_facts: int
    n_ti_entities: int
    qual_fraction_raw: float = 0.0
    no_qualifiers: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items())

    def table_row(self) -> str:
        """Rounded as in the published statistics tables."""
        return (
            f"N_train={self.n_train:,} N_valid={self.n_valid:,} N_test={self.n_test:,} "
            f"E_pri={self.n_entities_pri:,} E_qual={self.n_entities_qual:,} "
            f"R_pri={self.n_relations_pri:,} R_qual={self.n_relations_qual:,} T={self.n_timestamps:,} "
            f"|Qual|={self.n_facts_with_qual:,} avg={self.avg_quals_per_qual_fact:.2f} "
            f"Qual%={self.qual_percent:.2f} G_TI={self.n_ti_facts:,} E_TI={self.n_ti_entities:,}"
        )


@dataclass
class LoadOptions:
    train_file: str = "train.txt"
    valid_file: str = "valid.txt"
    test_file: str = "test.txt"
    ti_file: str = "ti.txt"
    # If present in the directory, these pin the vocabularies (one token per line).
    entity_vocab_file: str = "entities.txt"
    relation_vocab_file: str = "relations.txt"
    # Tokens are integer ids into the pinned vocabularies instead of names.
    numeric_ids: bool = False


@dataclass
class Dataset:
    train: list[HyperFact]
    valid: list[HyperFact]
    test: list[HyperFact]
    ti_facts: list[TiFact]
    entity_vocab: Vocab
    relation_vocab: Vocab
    time_vocab: Vocab
    ti_relation_vocab: Vocab
    n_entities: int
    """Size of the HTKG entity set; ids at or above it are TI-only entities."""
    n_base_relations: int
    augmented: bool = False
    stats: DatasetStats | None = None

    def split(self, name: str) -> list[HyperFact]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def n_all_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def n_relations(self) -> int:
        return len(self.relation_vocab)

    @property
    def n_ti_relations(self) -> int:
        return len(self.ti_relation_vocab)

    @property
    def n_timestamps(self) -> int:
        return len(self.time_vocab)

    @property
    def ti_entity_vocab(self) -> list[str]:
        return self.entity_vocab.tokens()[self.n_entities :]

    def all_facts(self) -> list[HyperFact]:
        return self.train + self.valid + self.test


# ---------------------------------------------------------------------------
# Loading / writing
# ---------------------------------------------------------------------------
def _read_lines(path: Path) -> Iterator[tuple[int, list[str]]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def _parse_year(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise DataFormatError(f"{where}: timestamp {raw!r} is not an integer year") from None


def _read_vocab_file(path: Path) -> Vocab:
    tokens = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.rstrip("\n")
            if tok in seen:
                raise DataFormatError(f"{path.name}:{lineno}: duplicate vocabulary entry {tok!r}")
            seen.add(tok)
            tokens.append(tok)
    return Vocab(tokens)


def load_dataset(path: str | Path, options: LoadOptions | None = None) -> Dataset:
    """Load a dataset directory, building vocabularies in first-seen order."""
    options = options or LoadOptions()
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")

    pinned_ent = root / options.entity_vocab_file
    pinned_rel = root / options.relation_vocab_file
    ent_vocab = _read_vocab_file(pinned_ent) if pinned_ent.exists() else None
    rel_vocab = _read_vocab_file(pinned_rel) if pinned_rel.exists() else None
    if options.numeric_ids and (ent_vocab is None or rel_vocab is None):
        raise DataFormatError("numeric_ids requires entity and relation vocabulary files")
    frozen_ent = ent_vocab is not None
    frozen_rel = rel_vocab is not None
    ent_vocab = ent_vocab or Vocab()
    rel_vocab = rel_vocab or Vocab()

    def lookup(vocab: Vocab, frozen: bool, tok: str, kind: str, where: str) -> int:
        if options.numeric_ids:
            try:
                idx = int(tok)
            except ValueError:
                raise DataFormatError(f"{where}: {kind} id {tok!r} is not an integer") from None
            if idx < 0 or idx >= len(vocab):
                raise DataFormatError(f"{where}: {kind} id overflow ({idx} >= {len(vocab)})")
            return idx
        if frozen:
            idx = vocab.get(tok)
            if idx is None:
                raise DataFormatError(f"{where}: unknown {kind} {tok!r}")
            return idx
        return vocab.add(tok)

    raw_splits: dict[str, list[tuple[int, int, int, int, tuple[Qualifier, ...]]]] = {}
    years: dict[int, str] = {}
    for split in SPLITS:
        fname = getattr(options, f"{split}_file")
        fpath = root / fname
        if not fpath.exists():
            raise FileNotFoundError(f"missing split file {fpath}")
        rows = []
        for lineno, cols in _read_lines(fpath):
            where = f"{fname}:{lineno}"
            if len(cols) < 4 or len(cols) % 2 != 0:
                raise DataFormatError(
                    f"{where}: expected s, r, o, t followed by qualifier pairs, got {len(cols)} columns"
                )
            s = lookup(ent_vocab, frozen_ent, cols[0], "entity", where)
            r = lookup(rel_vocab, frozen_rel, cols[1], "relation", where)
            o = lookup(ent_vocab, frozen_ent, cols[2], "entity", where)
            year = _parse_year(cols[3], where)
            years.setdefault(year, cols[3])
            quals = []
            for k in range(4, len(cols), 2):
                qr = lookup(rel_vocab, frozen_rel, cols[k], "relation", where)
                qe = lookup(ent_vocab, frozen_ent, cols[k + 1], "entity", where)
                quals.append(Qualifier(qr, qe))
            rows.append((s, r, o, year, tuple(quals)))
        if split == "train" and not rows:
            raise DataFormatError(f"{fname}: empty split")
        raw_splits[split] = rows

    n_entities = len(ent_vocab)
    ti_rel_vocab = Vocab()
    ti_facts: list[TiFact] = []
    ti_path = root / options.ti_file
    if ti_path.exists():
        for lineno, cols in _read_lines(ti_path):
            where = f"{options.ti_file}:{lineno}"
            if len(cols) != 3:
                raise DataFormatError(f"{where}: expected s, r, o, got {len(cols)} columns")
            if options.numeric_ids or frozen_ent:
                s = lookup(ent_vocab, frozen_ent, cols[0], "entity", where)
                o = lookup(ent_vocab, frozen_ent, cols[2], "entity", where)
            else:
                s, o = ent_vocab.add(cols[0]), ent_vocab.add(cols[2])
            ti_facts.append(TiFact(s, ti_rel_vocab.add(cols[1]), o))

    time_vocab = Vocab(years[y] for y in sorted(years))
    time_of = {y: i for i, y in enumerate(sorted(years))}

    def build(rows):
        return [HyperFact(s, r, o, time_of[y], q) for s, r, o, y, q in rows]

    ds = Dataset(
        train=build(raw_splits["train"]),
        valid=build(raw_splits["valid"]),
        test=build(raw_splits["test"]),
        ti_facts=ti_facts,
        entity_vocab=ent_vocab,
        relation_vocab=rel_vocab,
        time_vocab=time_vocab,
        ti_relation_vocab=ti_rel_vocab,
        n_entities=n_entities,
        n_base_relations=len(rel_vocab),
    )
    _check_ti_disjoint(ds)
    ds.stats = compute_stats(ds)
    logger.info("loaded %s: %s", root, ds.stats.table_row())
    return ds


def _check_ti_disjoint(ds: Dataset) -> None:
    ti_names = set(ds.ti_relation_vocab)
    clash = ti_names & set(ds.relation_vocab)
    if clash:
        raise DataFormatError(f"TI relations overlap HTKG relations: {sorted(clash)[:5]}")


def format_fact(ds: Dataset, fact: HyperFact) -> str:
    cols = [
        ds.entity_vocab.token(fact.subject),
        ds.relation_vocab.token(fact.relation),
        ds.entity_vocab.token(fact.object),
        ds.time_vocab.token(fact.time),
    ]
    for q in fact.qualifiers:
        cols += [ds.relation_vocab.token(q.relation), ds.entity_vocab.token(q.entity)]
    return "\t".join(cols)


def write_dataset(ds: Dataset, path: str | Path, options: LoadOptions | None = None) -> None:
    """Write the canonical text form; ``load_dataset`` on the result gives back the same facts."""
    if ds.augmented:
        raise ValueError("refusing to write an inverse-augmented dataset")
    options = options or LoadOptions()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        lines = [format_fact(ds, f) for f in ds.split(split)]
        (root / getattr(options, f"{split}_file")).write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
    if ds.ti_facts:
        lines = [
            "\t".join(
                (
                    ds.entity_vocab.token(f.subject),
                    ds.ti_relation_vocab.token(f.relation),
                    ds.entity_vocab.token(f.object),
                )
            )
            for f in ds.ti_facts
        ]
        (root / options.ti_file).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Inverse augmentation and queries
# ---------------------------------------------------------------------------
def inverse_relation(ds: Dataset, relation: int) -> int:
    return relation + ds.n_base_relations


def augment_inverse(ds: Dataset) -> Dataset:
    """Append ``((o, r^-1, s, t), Q)`` for every fact of every split, after the originals."""
    if ds.augmented:
        raise ValueError("dataset is already inverse-augmented")
    nr = ds.n_base_relations
    rel_vocab = ds.relation_vocab.copy()
    for name in ds.relation_vocab.tokens():
        inv = name + INVERSE_SUFFIX
        if inv in rel_vocab:
            raise ValueError(f"inverse relation name {inv!r} collides with an existing relation")
        rel_vocab.add(inv)

    def aug(facts: Sequence[HyperFact]) -> list[HyperFact]:
        out = list(facts)
        out.extend(HyperFact(f.object, f.relation + nr, f.subject, f.time, f.qualifiers) for f in facts)
        return out

    return replace(
        ds,
        train=aug(ds.train),
        valid=aug(ds.valid),
        test=aug(ds.test),
        relation_vocab=rel_vocab,
        augmented=True,
    )


def derive_queries(facts: Sequence[HyperFact]) -> list[LpQuery]:
    return [LpQuery(f.subject, f.relation, f.time, f.qualifiers, f.object) for f in facts]


# ---------------------------------------------------------------------------
# Neighbour indexes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TemporalNeighbor:
    subject: int
    relation: int
    time: int
    qualifiers: tuple[Qualifier, ...]


@dataclass
class NeighborArrays:
    """Flat view of a temporal index, one row per (target, neighbour) edge."""

    target: np.ndarray
    source: np.ndarray
    relation: np.ndarray
    time: np.ndarray
    qual_edge: np.ndarray
    qual_relation: np.ndarray
    qual_entity: np.ndarray


class TemporalNeighborIndex:
    """entity -> temporal neighbours ``(e', r', t', Q)`` from facts ``(e', r', e, t', Q)``."""

    def __init__(self, facts: Iterable[HyperFact]):
        self._by_entity: dict[int, list[TemporalNeighbor]] = defaultdict(list)
        for f in facts:
            self._by_entity[f.object].append(TemporalNeighbor(f.subject, f.relation, f.time, f.qualifiers))
        self._by_entity = dict(self._by_entity)

    def __getitem__(self, entity: int) -> list[TemporalNeighbor]:
        return self._by_entity.get(entity, [])

    def __contains__(self, entity: int) -> bool:
        return entity in self._by_entity

    def entities(self) -> list[int]:
        return sorted(self._by_entity)

    def degree(self, entity: int) -> int:
        return len(self._by_entity.get(entity, ()))

    def total_entries(self) -> int:
        return sum(len(v) for v in self._by_entity.values())

    def arrays(
        self,
        targets: Iterable[int],
        cap: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> NeighborArrays:
        """Edges into ``targets``; more than ``cap`` neighbours are subsampled uniformly."""
        tgt, src, rel, tim = [], [], [], []
        q_edge, q_rel, q_ent = [], [], []
        for e in targets:
            nbrs = self._by_entity.get(e, ())
            if cap is not None and len(nbrs) > cap:
                gen = rng if rng is not None else np.random.default_rng(e)
                keep = np.sort(gen.choice(len(nbrs), size=cap, replace=False))
                nbrs = [nbrs[i] for i in keep]
            for n in nbrs:
                row = len(tgt)
                tgt.append(e)
                src.append(n.subject)
                rel.append(n.relation)
                tim.append(n.time)
                for q in n.qualifiers:
                    q_edge.append(row)
                    q_rel.append(q.relation)
                    q_ent.append(q.entity)
        as_int = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
        return NeighborArrays(
            as_int(tgt), as_int(src), as_int(rel), as_int(tim), as_int(q_edge), as_int(q_rel), as_int(q_ent)
        )


def build_temporal_index(facts: Iterable[HyperFact]) -> TemporalNeighborIndex:
    return TemporalNeighborIndex(facts)


class TiNeighborIndex:
    """entity -> TI neighbours ``(e'', r'')`` from TI triples ``(e'', r'', e)``."""

    def __init__(self, ti_facts: Iterable[TiFact]):
        by: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for f in ti_facts:
            by[f.object].append((f.subject, f.relation))
        self._by_entity = dict(by)

    def __getitem__(self, entity: int) -> list[tuple[int, int]]:
        return self._by_entity.get(entity, [])

    def total_entries(self) -> int:
        return sum(len(v) for v in self._by_entity.values())


def build_ti_index(ti_facts: Iterable[TiFact]) -> TiNeighborIndex:
    return TiNeighborIndex(ti_facts)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------
def compute_stats(ds: Dataset) -> DatasetStats:
    """Table-style statistics of an un-augmented dataset.

    ``qual_percent`` follows the published tables, which divide the number of
    qualifier-bearing facts by twice the fact count (facts plus their inverses);
    ``qual_fraction_raw`` is the plain ratio.
    """
    if ds.augmented:
        raise ValueError("compute_stats expects an un-augmented dataset")
    facts = ds.all_facts()
    ent_pri, rel_pri, ent_q, rel_q, times = set(), set(), set(), set(), set()
    n_qual_facts = 0
    n_quals = 0
    for f in facts:
        ent_pri.update((f.subject, f.object))
        rel_pri.add(f.relation)
        times.add(f.time)
        if f.qualifiers:
            n_qual_facts += 1
            n_quals += len(f.qualifiers)
            for q in f.qualifiers:
                ent_q.add(q.entity)
                rel_q.add(q.relation)
    htkg_entities = ent_pri | ent_q
    ti_entities = set()
    for f in ds.ti_facts:
        for e in (f.subject, f.object):
            if e not in htkg_entities:
                ti_entities.add(e)
    n = len(facts)
    return DatasetStats(
        n_train=len(ds.train),
        n_valid=len(ds.valid),
        n_test=len(ds.test),
        n_entities_pri=len(ent_pri),
        n_entities_qual=len(ent_q - ent_pri),
        n_relations_pri=len(rel_pri),
        n_relations_qual=len(rel_q - rel_pri),
        n_timestamps=len(times),
        n_facts_with_qual=n_qual_facts,
        avg_quals_per_qual_fact=(n_quals / n_qual_facts) if n_qual_facts else 0.0,
        qual_percent=(100.0 * n_qual_facts / (2 * n)) if n else 0.0,
        n_ti_facts=len(ds.ti_facts),
        n_ti_entities=len(ti_entities),
        qual_fraction_raw=(n_qual_facts / n) if n else 0.0,
        no_qualifiers=n_qual_facts == 0,
    )


# ---------------------------------------------------------------------------
# Proportion sampling
# ---------------------------------------------------------------------------
class SamplingError(ValueError):
    pass


# Nominal percentage -> split size as a multiple of the qualifier-bearing facts.
PROPORTION_MULTIPLIER = {100: (1, 1), 66: (3, 2), 33: (3, 1)}


def sample_proportion_dataset(ds: Dataset, target_percent: int, seed: int) -> Dataset:
    """Build the (100)/(66)/(33) subsets.

    Every qualifier-bearing fact is kept.  Each split is topped up with
    qualifier-free facts drawn from the same split until qualifier-bearing facts
    make up 100%, 2/3 or 1/3 of it.  The draw order is one seeded permutation per
    split, so the subsets are nested: (100) within (66) within (33).
    """
    if ds.augmented:
        raise ValueError("sample_proportion_dataset expects an un-augmented dataset")
    if target_percent not in PROPORTION_MULTIPLIER:
        raise ValueError(f"target_percent must be one of {sorted(PROPORTION_MULTIPLIER)}, got {target_percent}")
    num, den = PROPORTION_MULTIPLIER[target_percent]
    root = np.random.SeedSequence(seed)
    split_seeds = root.spawn(len(SPLITS))
    out: dict[str, list[HyperFact]] = {}
    for split, sseed in zip(SPLITS, split_seeds):
        facts = ds.split(split)
        with_q = [i for i, f in enumerate(facts) if f.qualifiers]
        without_q = np.array([i for i, f in enumerate(facts) if not f.qualifiers], dtype=np.int64)
        target_size = (len(with_q) * num + den // 2) // den
        extra = target_size - len(with_q)
        if extra > len(without_q):
            raise SamplingError(
                f"{split}: need {extra} qualifier-free facts for the ({target_percent}) set, only {len(without_q)} exist"
            )
        order = np.random.default_rng(sseed).permutation(len(without_q))
        chosen = set(with_q) | set(without_q[order[:extra]].tolist())
        out[split] = [f for i, f in enumerate(facts) if i in chosen]
    sampled = replace(ds, train=out["train"], valid=out["valid"], test=out["test"])
    sampled.stats = compute_stats(sampled)
    return sampled
