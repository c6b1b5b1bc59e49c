"""Loading, augmentation, neighbour indexes, statistics and proportion sampling."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from hypetkg.data import (
    DataFormatError,
    HyperFact,
    LoadOptions,
    Qualifier,
    SamplingError,
    TiFact,
    augment_inverse,
    build_temporal_index,
    build_ti_index,
    compute_stats,
    derive_queries,
    load_dataset,
    sample_proportion_dataset,
    write_dataset,
)
from hypetkg.toy import make_toy_dataset

TOY_LINES = {
    "train": "a\tr1\tb\t2001\tq1\tc\tq2\td\n" "b\tr2\tc\t1999\n",
    "valid": "c\tr1\ta\t2003\tq1\td\n",
    "test": "",
}


def write_dir(root, files):
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / name).write_text(text, encoding="utf-8")
    return root


def toy_dir(tmp_path, **extra):
    files = {f"{k}.txt": v for k, v in TOY_LINES.items()}
    files.update(extra)
    return write_dir(tmp_path / "ds", files)


def test_three_fact_round_trip(tmp_path):
    ds = load_dataset(toy_dir(tmp_path))
    write_dataset(ds, tmp_path / "out")
    again = load_dataset(tmp_path / "out")
    assert again.train == ds.train and again.valid == ds.valid and again.test == ds.test
    for split in ("train", "valid", "test"):
        assert (tmp_path / "out" / f"{split}.txt").read_text() == TOY_LINES[split]


def test_vocab_first_seen_and_chronological_times(tmp_path):
    ds = load_dataset(toy_dir(tmp_path))
    assert ds.entity_vocab.tokens() == ["a", "b", "c", "d"]
    assert ds.relation_vocab.tokens() == ["r1", "q1", "q2", "r2"]
    assert ds.time_vocab.tokens() == ["1999", "2001", "2003"]
    assert ds.train[0].time == 1 and ds.train[1].time == 0
    assert ds.train[0].qualifiers == (Qualifier(1, 2), Qualifier(2, 3))
    for tok in ds.entity_vocab:
        assert ds.entity_vocab.token(ds.entity_vocab.id(tok)) == tok


def test_empty_train_split(tmp_path):
    root = write_dir(tmp_path / "d", {"train.txt": "# nothing\n", "valid.txt": "", "test.txt": ""})
    with pytest.raises(DataFormatError, match="empty split"):
        load_dataset(root)


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("a\tr\tb\n", "3 columns"),
        ("a\tr\tb\t2000\tq\n", "5 columns"),
        ("a\tr\tb\tyesterday\n", "not an integer year"),
    ],
)
def test_malformed_line_reports_location(tmp_path, line, fragment):
    root = write_dir(tmp_path / "d", {"train.txt": "a\tr\tb\t2000\n" + line, "valid.txt": "", "test.txt": ""})
    with pytest.raises(DataFormatError, match=rf"train\.txt:2: .*{fragment}"):
        load_dataset(root)


def test_numeric_id_overflow(tmp_path):
    root = write_dir(
        tmp_path / "d",
        {
            "entities.txt": "a\nb\n",
            "relations.txt": "r\n",
            "train.txt": "0\t0\t1\t2000\n0\t0\t2\t2000\n",
            "valid.txt": "",
            "test.txt": "",
        },
    )
    with pytest.raises(DataFormatError, match=r"train\.txt:2: entity id overflow"):
        load_dataset(root, LoadOptions(numeric_ids=True))


def test_duplicate_vocab_entry(tmp_path):
    root = toy_dir(tmp_path, **{"entities.txt": "a\nb\na\n"})
    with pytest.raises(DataFormatError, match=r"entities\.txt:3: duplicate"):
        load_dataset(root)


def test_pinned_vocab_rejects_unknown_token(tmp_path):
    root = toy_dir(tmp_path, **{"entities.txt": "a\nb\nc\n"})
    with pytest.raises(DataFormatError, match="unknown entity 'd'"):
        load_dataset(root)


def test_ti_relations_must_be_disjoint(tmp_path):
    root = toy_dir(tmp_path, **{"ti.txt": "a\tr1\tz\n"})
    with pytest.raises(DataFormatError, match="overlap"):
        load_dataset(root)


def test_ti_entities_come_after_htkg_entities(tmp_path):
    ds = load_dataset(toy_dir(tmp_path, **{"ti.txt": "a\tlang\tx\ny\tlang\tb\n"}))
    assert ds.n_entities == 4 and ds.n_all_entities == 6
    assert ds.ti_entity_vocab == ["x", "y"]
    assert ds.ti_facts == [TiFact(0, 0, 4), TiFact(5, 0, 1)]
    assert ds.stats.n_ti_facts == 2 and ds.stats.n_ti_entities == 2


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        load_dataset("/nonexistent/htkg")


# -- inverse augmentation and queries ------------------------------------------


def test_augment_single_fact(tmp_path):
    root = write_dir(tmp_path / "d", {"train.txt": "a\tr\tb\t2000\tq\tc\n", "valid.txt": "", "test.txt": ""})
    ds = load_dataset(root)
    # q is a second relation, so |R_base| = 2 here; inverse of r is 0 + 2
    aug = augment_inverse(ds)
    assert len(aug.train) == 2
    inv = aug.train[1]
    assert (inv.subject, inv.relation, inv.object) == (1, 2, 0)
    assert inv.qualifiers == ds.train[0].qualifiers
    assert aug.relation_vocab.tokens() == ["r", "q", "r^-1", "q^-1"]


def test_augment_one_base_relation():
    ds = make_toy_dataset(n_entities=3, n_facts=1, n_relations=1, n_qual_relations=0, qual_prob=0.0)
    aug = augment_inverse(ds)
    f, inv = aug.train
    assert inv.relation == 1 and (inv.subject, inv.object) == (f.object, f.subject)
    assert inv.time == f.time and inv.qualifiers == f.qualifiers


def test_augment_preserves_qualifier_order_and_doubles_counts():
    ds = make_toy_dataset(n_entities=12, n_facts=40, qual_prob=0.8, split=(5, 5), seed=3)
    aug = augment_inverse(ds)
    for split in ("train", "valid", "test"):
        orig, doubled = ds.split(split), aug.split(split)
        assert len(doubled) == 2 * len(orig)
        for f, g in zip(orig, doubled[len(orig) :]):
            assert g.qualifiers == f.qualifiers
    assert aug.n_relations == 2 * ds.n_relations


def test_augment_guard():
    aug = augment_inverse(make_toy_dataset())
    with pytest.raises(ValueError, match="already"):
        augment_inverse(aug)


def test_augment_name_collision(tmp_path):
    root = write_dir(
        tmp_path / "d", {"train.txt": "a\tr\tb\t2000\na\tr^-1\tb\t2000\n", "valid.txt": "", "test.txt": ""}
    )
    with pytest.raises(ValueError, match="collides"):
        augment_inverse(load_dataset(root))


def test_derive_queries():
    ds = make_toy_dataset(n_entities=10, n_facts=30, split=(4, 6), seed=1)
    aug = augment_inverse(ds)
    queries = derive_queries(aug.test)
    assert len(queries) == 2 * len(ds.test)
    n = len(ds.test)
    for k in range(n):
        f = ds.test[k]
        assert queries[k].ground_truth == f.object
        assert queries[n + k].ground_truth == f.subject
        assert queries[k].qualifiers == f.qualifiers


def test_query_with_empty_qualifiers():
    (q,) = derive_queries([HyperFact(0, 0, 1, 0)])
    assert q.qualifiers == () and q.ground_truth == 1


# -- neighbour indexes ------------------------------------------------------------


def test_temporal_index_single_fact():
    idx = build_temporal_index([HyperFact(0, 0, 1, 5)])
    (n,) = idx[1]
    assert (n.subject, n.relation, n.time, n.qualifiers) == (0, 0, 5, ())
    assert idx[0] == []


def test_temporal_index_fact_and_inverse():
    idx = build_temporal_index([HyperFact(0, 0, 1, 5), HyperFact(1, 1, 0, 5)])
    assert idx.degree(0) == 1 and idx.degree(1) == 1


def test_temporal_index_matches_brute_force():
    aug = augment_inverse(make_toy_dataset(n_entities=8, n_facts=10, seed=7))
    idx = build_temporal_index(aug.train)
    scan = Counter(f.object for f in aug.train)
    for e in range(aug.n_entities):
        assert idx.degree(e) == scan.get(e, 0)
        expected = [(f.subject, f.relation, f.time, f.qualifiers) for f in aug.train if f.object == e]
        assert [(n.subject, n.relation, n.time, n.qualifiers) for n in idx[e]] == expected
    assert idx.total_entries() == len(aug.train)


def test_neighbor_arrays_cap_and_layout():
    aug = augment_inverse(make_toy_dataset(n_entities=5, n_facts=30, qual_prob=0.7, seed=2))
    idx = build_temporal_index(aug.train)
    full = idx.arrays(range(aug.n_entities))
    assert len(full.target) == idx.total_entries()
    assert len(full.qual_edge) == sum(len(f.qualifiers) for f in aug.train)
    capped = idx.arrays(range(aug.n_entities), cap=3, rng=np.random.default_rng(0))
    counts = Counter(capped.target.tolist())
    for e in range(aug.n_entities):
        assert counts.get(e, 0) == min(3, idx.degree(e))


def test_ti_index_iff():
    facts = [TiFact(5, 0, 1), TiFact(6, 1, 1), TiFact(1, 0, 7)]
    idx = build_ti_index(facts)
    for e in range(8):
        assert set(idx[e]) == {(f.subject, f.relation) for f in facts if f.object == e}
    assert idx.total_entries() == 3


# -- statistics -------------------------------------------------------------------


def test_stats_fields(tmp_path):
    s = load_dataset(toy_dir(tmp_path)).stats
    assert (s.n_train, s.n_valid, s.n_test) == (2, 1, 0)
    assert s.n_entities_pri == 3 and s.n_entities_qual == 1
    assert s.n_relations_pri == 2 and s.n_relations_qual == 2
    assert s.n_timestamps == 3
    assert s.n_facts_with_qual == 2
    assert s.avg_quals_per_qual_fact == pytest.approx(1.5)
    assert s.qual_fraction_raw == pytest.approx(2 / 3)
    # published-table convention: facts plus inverses in the denominator
    assert s.qual_percent == pytest.approx(100 * 2 / 6)


def test_stats_without_qualifiers():
    s = compute_stats(make_toy_dataset(qual_prob=0.0))
    assert s.qual_percent == 0 and s.avg_quals_per_qual_fact == 0 and s.no_qualifiers


def test_stats_reject_augmented():
    with pytest.raises(ValueError):
        compute_stats(augment_inverse(make_toy_dataset()))


def test_stats_json_and_text(tmp_path):
    import json

    s = load_dataset(toy_dir(tmp_path)).stats
    assert json.loads(s.to_json())["n_train"] == 2
    assert "n_train=2" in s.to_text()


# -- proportion sampling -------------------------------------------------------------


@pytest.fixture
def mixed():
    return make_toy_dataset(n_entities=40, n_facts=400, qual_prob=0.2, split=(60, 60), seed=11)


def test_sampling_sizes_and_retention(mixed):
    for pct, mult in ((100, 1.0), (66, 1.5), (33, 3.0)):
        sub = sample_proportion_dataset(mixed, pct, seed=0)
        for split in ("train", "valid", "test"):
            src = mixed.split(split)
            q = [f for f in src if f.qualifiers]
            got = sub.split(split)
            assert abs(len(got) - mult * len(q)) <= 1
            assert [f for f in got if f.qualifiers] == q
            # sampled facts stay in their split, in source order
            pos = [src.index(f) for f in got]
            assert pos == sorted(pos)


def test_sampling_nested_and_reproducible(mixed):
    subs = {p: sample_proportion_dataset(mixed, p, seed=5) for p in (100, 66, 33)}
    for split in ("train", "valid", "test"):
        a, b, c = (set(subs[p].split(split)) for p in (100, 66, 33))
        assert a <= b <= c
    again = sample_proportion_dataset(mixed, 66, seed=5)
    assert again.train == subs[66].train and again.test == subs[66].test


def test_sampling_identity_when_all_facts_qualified():
    ds = make_toy_dataset(n_facts=20, qual_prob=1.0, split=(3, 3))
    sub = sample_proportion_dataset(ds, 100, seed=0)
    assert sub.train == ds.train and sub.valid == ds.valid and sub.test == ds.test


def test_sampling_unreachable():
    ds = make_toy_dataset(n_facts=20, qual_prob=1.0)
    with pytest.raises(SamplingError):
        sample_proportion_dataset(ds, 33, seed=0)


def test_sampling_bad_percent(mixed):
    with pytest.raises(ValueError):
        sample_proportion_dataset(mixed, 50, seed=0)
