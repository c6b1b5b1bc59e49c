"""Benchmark construction from quadruple TKGs and Wikidata statements."""

from .build import BuildConfig, BuildReport, build_benchmark, read_quadruples, redistribute_splits, split_sizes
from .client import (
    FIXTURE_ENV,
    ClientError,
    FixtureMissingError,
    HttpResponse,
    MalformedResponseError,
    TransportError,
    WikidataClient,
    request_key,
)
from .extract import fetch_qualifiers, mine_ti_facts, qualifier_pairs, select_statement
from .mapping import (
    TI_RELATIONS,
    YAGO_TO_WIKIDATA,
    MappedRelation,
    Quadruple,
    RelationMapping,
    UnmappedRelationError,
    map_relations,
)

__all__ = [
    "BuildConfig",
    "BuildReport",
    "ClientError",
    "FIXTURE_ENV",
    "FixtureMissingError",
    "HttpResponse",
    "MalformedResponseError",
    "MappedRelation",
    "Quadruple",
    "RelationMapping",
    "TI_RELATIONS",
    "TransportError",
    "UnmappedRelationError",
    "WikidataClient",
    "YAGO_TO_WIKIDATA",
    "build_benchmark",
    "fetch_qualifiers",
    "map_relations",
    "mine_ti_facts",
    "qualifier_pairs",
    "read_quadruples",
    "redistribute_splits",
    "request_key",
    "select_statement",
    "split_sizes",
]
