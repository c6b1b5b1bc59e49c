"""YAGO-to-Wikidata relation mapping and the time-invariant relation set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping


@dataclass(frozen=True)
class Quadruple:
    subject: str
    relation: str
    object: str
    time: str


@dataclass(frozen=True)
class MappedRelation:
    property_id: str
    label: str
    inverted: bool = False


class UnmappedRelationError(KeyError):
    def __init__(self, relations: Iterable[str]):
        self.relations = sorted(set(relations))
        super().__init__(f"no Wikidata property for relation(s): {', '.join(self.relations)}")


class RelationMapping:
    def __init__(self, rows: Mapping[str, MappedRelation]):
        self.rows = dict(rows)

    def __getitem__(self, relation: str) -> MappedRelation:
        return self.rows[relation]

    def __contains__(self, relation: str) -> bool:
        return relation in self.rows

    def __len__(self) -> int:
        return len(self.rows)

    def property_ids(self) -> list[str]:
        return [m.property_id for m in self.rows.values()]


YAGO_TO_WIKIDATA = RelationMapping(
    {
        "wasBornIn": MappedRelation("P19", "place of birth"),
        "diedIn": MappedRelation("P20", "place of death"),
        "worksAt": MappedRelation("P108", "employer"),
        "playsFor": MappedRelation("P54", "member of sports team"),
        "hasWonPrize": MappedRelation("P166", "award received"),
        "isMarriedTo": MappedRelation("P26", "spouse"),
        # YAGO's owner->owned reads as Wikidata's owned->owner, so the ends swap.
        "owns": MappedRelation("P127", "owned by", inverted=True),
        "graduatedFrom": MappedRelation("P69", "educated at"),
        "isAffiliatedTo": MappedRelation("P102", "member of political party"),
        "created": MappedRelation("P800", "notable work"),
    }
)

# The ten time-invariant relations, in the order they are mined.
TI_RELATIONS: tuple[tuple[str, str], ...] = (
    ("family name", "P734"),
    ("native language", "P103"),
    ("subclass of", "P279"),
    ("official language", "P37"),
    ("child", "P40"),
    ("sibling", "P3373"),
    ("father", "P22"),
    ("mother", "P25"),
    ("ethnic group", "P172"),
    ("country of origin", "P495"),
)


def map_relations(facts: Iterable[Quadruple], mapping: RelationMapping = YAGO_TO_WIKIDATA) -> list[Quadruple]:
    facts = list(facts)
    missing = [f.relation for f in facts if f.relation not in mapping]
    if missing:
        raise UnmappedRelationError(missing)
    out = []
    for f in facts:
        m = mapping[f.relation]
        if m.inverted:
            out.append(Quadruple(f.object, m.property_id, f.subject, f.time))
        else:
            out.append(Quadruple(f.subject, m.property_id, f.object, f.time))
    return out
