"""Small random HTKGs for tests, gradient checks and smoke runs."""

from __future__ import annotations

import numpy as np

from .data import Dataset, HyperFact, Qualifier, TiFact, Vocab, compute_stats


def make_toy_dataset(
    n_entities: int = 10,
    n_facts: int = 15,
    n_relations: int = 3,
    n_qual_relations: int = 2,
    n_times: int = 5,
    qual_prob: float = 0.5,
    max_quals: int = 3,
    n_ti_facts: int = 0,
    n_ti_entities: int = 0,
    n_ti_relations: int = 2,
    split: tuple[int, int] = (0, 0),
    seed: int = 0,
) -> Dataset:
    """Random un-augmented dataset; ``split`` gives (n_valid, n_test) taken off the end.

    Facts are distinct as (s, r, o, t) quadruples.
    """
    rng = np.random.default_rng(seed)
    ent = Vocab(f"e{i}" for i in range(n_entities))
    rel = Vocab([f"r{i}" for i in range(n_relations)] + [f"q{i}" for i in range(n_qual_relations)])
    times = Vocab(str(2000 + t) for t in range(n_times))
    seen = set()
    facts = []
    limit = n_entities * (n_entities - 1) * n_relations * n_times
    if n_facts > limit:
        raise ValueError("too many facts requested for the toy vocabulary")
    while len(facts) < n_facts:
        s, o = rng.choice(n_entities, size=2, replace=False)
        r = int(rng.integers(n_relations))
        t = int(rng.integers(n_times))
        if (s, r, o, t) in seen:
            continue
        seen.add((s, r, o, t))
        quals: tuple[Qualifier, ...] = ()
        if n_qual_relations and rng.random() < qual_prob:
            k = int(rng.integers(1, max_quals + 1))
            quals = tuple(
                Qualifier(n_relations + int(rng.integers(n_qual_relations)), int(rng.integers(n_entities)))
                for _ in range(k)
            )
        facts.append(HyperFact(int(s), r, int(o), t, quals))
    n_valid, n_test = split
    n_train = n_facts - n_valid - n_test
    ti_rel = Vocab(f"ti{i}" for i in range(n_ti_relations if n_ti_facts else 0))
    for i in range(n_ti_entities):
        ent.add(f"x{i}")
    ti = []
    pool = ent.tokens()
    for _ in range(n_ti_facts):
        s = int(rng.integers(len(pool)))
        o = int(rng.integers(len(pool)))
        ti.append(TiFact(s, int(rng.integers(len(ti_rel))), o))
    ds = Dataset(
        train=facts[:n_train],
        valid=facts[n_train : n_train + n_valid],
        test=facts[n_train + n_valid :],
        ti_facts=ti,
        entity_vocab=ent,
        relation_vocab=rel,
        time_vocab=times,
        ti_relation_vocab=ti_rel,
        n_entities=n_entities,
        n_base_relations=len(rel),
    )
    ds.stats = compute_stats(ds)
    return ds
