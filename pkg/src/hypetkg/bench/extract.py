"""Qualifier extraction and time-invariant fact mining from Wikidata statements."""

from __future__ import annotations

from typing import Iterable, Sequence

from .client import MalformedResponseError, WikidataClient
from .mapping import TI_RELATIONS, Quadruple

START_TIME, END_TIME, POINT_IN_TIME = "P580", "P582", "P585"
TIME_QUALIFIERS = (START_TIME, END_TIME, POINT_IN_TIME)


def snak_entity(snak: dict) -> str | None:
    """QID held by a snak, or None for non-item values and no-value/some-value snaks."""
    if snak.get("snaktype", "value") != "value":
        return None
    dv = snak.get("datavalue")
    if not isinstance(dv, dict) or dv.get("type") != "wikibase-entityid":
        return None
    value = dv.get("value")
    if not isinstance(value, dict):
        raise MalformedResponseError(f"entity datavalue without a value object: {snak}")
    if "id" in value:
        return value["id"]
    if "numeric-id" in value:
        return f"Q{value['numeric-id']}"
    raise MalformedResponseError(f"entity datavalue without an id: {snak}")


def snak_year(snak: dict) -> int | None:
    if snak.get("snaktype", "value") != "value":
        return None
    dv = snak.get("datavalue")
    if not isinstance(dv, dict) or dv.get("type") != "time":
        return None
    raw = dv.get("value", {}).get("time")
    if not isinstance(raw, str) or len(raw) < 2:
        raise MalformedResponseError(f"time datavalue without a time string: {snak}")
    sign = -1 if raw[0] == "-" else 1
    body = raw[1:] if raw[0] in "+-" else raw
    try:
        return sign * int(body.split("-", 1)[0])
    except ValueError:
        raise MalformedResponseError(f"unparseable time {raw!r}") from None


def statement_years(stmt: dict) -> tuple[list[int], int | None, int | None] | None:
    """(points, start, end) from a statement's time qualifiers; None if it has none."""
    quals = stmt.get("qualifiers") or {}
    if not any(p in quals for p in TIME_QUALIFIERS):
        return None

    def years(pid: str) -> list[int]:
        return [y for y in (snak_year(s) for s in quals.get(pid, [])) if y is not None]

    starts, ends = years(START_TIME), years(END_TIME)
    return years(POINT_IN_TIME), (min(starts) if starts else None), (max(ends) if ends else None)


def time_matches(stmt: dict, year: int) -> bool | None:
    """True/False for a statement with time qualifiers; None when it carries no time."""
    span = statement_years(stmt)
    if span is None:
        return None
    points, start, end = span
    if year in points:
        return True
    if start is None and end is None:
        return False
    return (start is None or start <= year) and (end is None or year <= end)


def qualifier_pairs(stmt: dict) -> list[tuple[str, str]]:
    """Entity-valued qualifier pairs of a statement, in the statement's qualifier order."""
    quals = stmt.get("qualifiers") or {}
    order = stmt.get("qualifiers-order") or list(quals)
    out = []
    for pid in order:
        for snak in quals.get(pid, []):
            qid = snak_entity(snak)
            if qid is not None:
                out.append((pid, qid))
    return out


def select_statement(statements: Sequence[dict], obj: str, year: int) -> dict | None:
    """The statement backing ``(.., obj, year)``: the first one whose time span covers
    the year, else the first one with no time qualifiers at all."""
    timeless = None
    for stmt in statements:
        if snak_entity(stmt.get("mainsnak", {})) != obj:
            continue
        hit = time_matches(stmt, year)
        if hit:
            return stmt
        if hit is None and timeless is None:
            timeless = stmt
    return timeless


def fetch_qualifiers(fact: Quadruple, client: WikidataClient) -> list[tuple[str, str]]:
    """Qualifier pairs under the Wikidata statement matching ``fact``; [] if there is none."""
    try:
        year = int(fact.time)
    except ValueError:
        raise ValueError(f"fact time {fact.time!r} is not a year") from None
    stmt = select_statement(client.get_claims(fact.subject, fact.relation), fact.object, year)
    return [] if stmt is None else qualifier_pairs(stmt)


def mine_ti_facts(
    entities: Iterable[str],
    client: WikidataClient,
    relations: Sequence[tuple[str, str]] = TI_RELATIONS,
    exclude: Iterable[tuple[str, str, str]] = (),
) -> list[tuple[str, str, str]]:
    """Time-invariant triples ``(entity, property, value)`` found for each entity.

    Output follows entity order, then relation order, then statement order;
    duplicates and any triple in ``exclude`` (the HTKG's primary triples) are dropped.
    """
    banned = set(exclude)
    seen: set[tuple[str, str, str]] = set()
    out = []
    for ent in entities:
        for _, pid in relations:
            for stmt in client.get_claims(ent, pid):
                obj = snak_entity(stmt.get("mainsnak", {}))
                if obj is None:
                    continue
                triple = (ent, pid, obj)
                if triple in seen or triple in banned:
                    continue
                seen.add(triple)
                out.append(triple)
    return out
