"""Command-line entry point: build, sample, stats, train, eval, gradcheck, dump-attention.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed input),
2 internal error (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import tomli

from .data import (
    INVERSE_SUFFIX,
    DataFormatError,
    SamplingError,
    augment_inverse,
    load_dataset,
    sample_proportion_dataset,
    write_dataset,
)
from .model import PRESETS, ModelConfig, apply_preset

logger = logging.getLogger("hypetkg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


# name -> (type, help); booleans become --x/--no-x switches.
MODEL_OPTIONS: dict[str, tuple[type, str]] = {
    "dim": (int, "embedding size"),
    "layers": (int, "aggregation layers in the encoder (1 or 2)"),
    "use_qualifiers": (bool, "model qualifiers at all"),
    "use_qual_attention": (bool, "attention over a neighbour's qualifiers"),
    "use_matcher": (bool, "global qualifier matcher in the decoder"),
    "use_time": (bool, "time modelling"),
    "use_ti": (bool, "time-invariant knowledge"),
    "neighbor_cap": (int, "max temporal neighbours per entity"),
    "ti_neighbor_cap": (int, "max time-invariant neighbours per entity"),
    "matcher_cap": (int, "max qualifiers in a subject's matcher pool"),
    "dropout": (float, "dropout rate"),
    "gamma_init": (float, "initial qualifier gate"),
    "beta_init": (float, "initial time-invariant gate"),
    "transformer_layers": (int, "layers per decoder Transformer"),
    "transformer_heads": (int, "attention heads per decoder Transformer"),
    "ff_mult": (int, "feed-forward width multiplier"),
    "embedding_init": (float, "uniform half-width for entity/relation tables (default 1/sqrt(dim))"),
    "weight_init_gain": (float, "multiplier on initial weight matrices"),
}
TRAIN_OPTIONS: dict[str, tuple[type, str]] = {
    "batch_size": (int, "queries per optimizer step"),
    "learning_rate": (float, "Adam step size"),
    "epochs": (int, "training epochs"),
    "eval_every": (int, "validate every N epochs (0 = never)"),
    "patience": (int, "early-stop after N validations without improvement (0 = off)"),
    "weight_decay": (float, "L2 penalty added to gradients"),
    "grad_clip": (float, "clip the global gradient norm (0 = off)"),
    "label_smoothing": (float, "label smoothing for the loss"),
}


def _flag(name: str) -> str:
    return "--" + (name[4:] if name.startswith("use_") else name).replace("_", "-")


def _add_options(p: argparse.ArgumentParser, options: dict[str, tuple[type, str]]) -> None:
    for name, (typ, help_text) in options.items():
        if typ is bool:
            p.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        else:
            p.add_argument(_flag(name), dest=name, type=typ, default=None, help=help_text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--workers", type=int, default=None, help="parallel workers (default 1)")
    p.add_argument("--config", type=Path, default=None, help="key = value file; flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypetkg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build an HTKG benchmark from a quadruple TKG")
    p.add_argument("source", type=Path, help="directory with train/valid/test quadruple files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--yago-relations", action="store_true", help="map YAGO relation names to Wikidata properties")
    p.add_argument("--redistribute", action="store_true", help="reshuffle facts into interpolation splits")
    p.add_argument("--ratios", type=str, default=None, help="train,valid,test ratios for --redistribute")
    p.add_argument("--fixtures", type=Path, default=None, help="fixture directory (default $HTKG_FIXTURE_DIR)")
    p.add_argument("--mode", choices=("fixture", "record", "live"), default="fixture")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--no-ti", action="store_true", help="skip time-invariant fact mining")
    _common(p)

    p = sub.add_parser("sample", help="derive a (100)/(66)/(33) qualifier-proportion dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--percent", type=int, required=True, choices=(100, 66, 33))
    p.add_argument("--out", type=Path, default=None)
    _common(p)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("dataset", type=Path)
    p.add_argument("--json", action="store_true", help="print only the JSON object")
    _common(p)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    _add_options(p, MODEL_OPTIONS)
    _add_options(p, TRAIN_OPTIONS)
    _common(p)

    p = sub.add_parser("eval", help="filtered ranking evaluation of a checkpoint")
    p.add_argument("dataset", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--report", type=Path, default=None, help="write the JSON report here")
    p.add_argument("--per-query", action="store_true")
    p.add_argument("--no-qualifier-filter", action="store_true", help="filter on (s, r, t) only")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--entities", type=int, default=10)
    p.add_argument("--facts", type=int, default=15)
    p.add_argument("--ti", action="store_true", help="include time-invariant facts and the TI branch")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=None, help="probe at most this many coordinates per tensor")
    _common(p)

    p = sub.add_parser("dump-attention", help="write qualifier attention weights for queries as JSON")
    p.add_argument("dataset", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--out", type=Path, default=None)
    _common(p)
    return parser


# -- configuration ---------------------------------------------------------------
def read_config(path: Path) -> dict[str, Any]:
    try:
        with path.open("rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):  # [model] / [train] tables are flattened
            flat.update({k.replace("-", "_"): v for k, v in value.items()})
        else:
            flat[key.replace("-", "_")] = value
    return flat


def resolve(args: argparse.Namespace, known: Sequence[str]) -> tuple[dict[str, Any], set[str]]:
    """Merge config-file values and flags; return the values and the keys set explicitly."""
    values: dict[str, Any] = {}
    if args.config is not None:
        cfg = read_config(args.config)
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise UsageError(f"unknown key(s) in {args.config}: {', '.join(unknown)}")
        values.update(cfg)
    for key in known:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values, set(values)


def model_config(values: dict[str, Any], explicit: set[str]) -> ModelConfig:
    cfg = ModelConfig(**{k: values[k] for k in MODEL_OPTIONS if k in values})
    preset = values.get("preset")
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        clashes = [
            f"{_flag(k)}={values[k]}" for k, v in PRESETS[preset].items() if k in explicit and values[k] != v
        ]
        if clashes:
            raise UsageError(f"preset {preset!r} conflicts with {', '.join(clashes)}")
        cfg = apply_preset(cfg, preset)
    return cfg


def _load_augmented(path: Path):
    return augment_inverse(load_dataset(path))


# -- subcommands -----------------------------------------------------------------
def cmd_build(args, values) -> int:
    from .bench import BuildConfig, WikidataClient, build_benchmark
    from .bench.client import DEFAULT_ENDPOINT

    ratios = None
    if args.ratios:
        try:
            ratios = tuple(float(x) for x in args.ratios.split(","))
        except ValueError:
            raise UsageError(f"--ratios expects three comma-separated numbers, got {args.ratios!r}") from None
        if len(ratios) != 3:
            raise UsageError("--ratios needs exactly three values")
    try:
        client = WikidataClient(args.fixtures, mode=args.mode, endpoint=args.endpoint or DEFAULT_ENDPOINT)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = BuildConfig(
        source=args.source,
        out=args.out,
        map_yago_relations=args.yago_relations,
        redistribute=args.redistribute,
        ratios=ratios,
        seed=values.get("seed", 0),
        mine_ti=not args.no_ti,
        workers=values.get("workers", 4),
    )
    report = build_benchmark(cfg, client)
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def cmd_sample(args, values) -> int:
    ds = load_dataset(args.dataset)
    sampled = sample_proportion_dataset(ds, args.percent, values.get("seed", 0))
    if args.out is not None:
        write_dataset(sampled, args.out)
    print(f"train={len(sampled.train)} valid={len(sampled.valid)} test={len(sampled.test)}")
    return 0


def cmd_stats(args, values) -> int:
    ds = load_dataset(args.dataset)
    if args.json:
        print(ds.stats.to_json())
    else:
        print(ds.stats.to_text())
        print(ds.stats.to_json())
    return 0


def cmd_train(args, values, explicit) -> int:
    from .evaluation import evaluate
    from .model import HypeTKG
    from .training import TrainConfig, save_checkpoint, train, write_metrics_csv

    cfg = model_config(values, explicit)
    seed = values.get("seed", 0)
    tcfg = TrainConfig(**{k: values[k] for k in TRAIN_OPTIONS if k in values}, seed=seed)
    ds = _load_augmented(args.dataset)
    model = HypeTKG.for_dataset(ds, cfg, seed=seed)
    workers = values.get("workers", 1)
    validate = None
    if ds.valid and tcfg.eval_every:
        validate = lambda m: evaluate(m, ds, "valid", workers=workers, seed=seed)  # noqa: E731
    args.out.mkdir(parents=True, exist_ok=True)
    history = []

    def on_epoch(rec):
        history.append(rec)
        write_metrics_csv(args.out / "metrics.csv", history)
        logger.info("epoch %d loss %.6f", rec.epoch, rec.train_loss)

    result = train(model, ds, tcfg, validate=validate, on_epoch=on_epoch)
    extra = {"rng_state": result.rng_state, "best_epoch": result.best_epoch, "best_valid_mrr": result.best_valid_mrr}
    save_checkpoint(args.out / "model.ckpt", model, tcfg, extra)
    last = result.history[-1] if result.history else None
    print(
        f"trained {len(result.history)} epochs; final loss "
        f"{'n/a' if last is None else f'{last.train_loss:.6f}'}; checkpoint {args.out / 'model.ckpt'}"
    )
    return 0


def cmd_eval(args, values) -> int:
    from .evaluation import evaluate
    from .training import load_checkpoint

    ds = _load_augmented(args.dataset)
    model, meta = load_checkpoint(args.checkpoint, ds)
    report = evaluate(
        model,
        ds,
        args.split,
        include_qualifiers=not args.no_qualifier_filter,
        workers=values.get("workers", 1),
        seed=values.get("seed", meta.get("seed", 0)),
        keep_queries=args.per_query,
    )
    if args.report is not None:
        args.report.write_text(report.to_json(args.per_query) + "\n", encoding="utf-8")
    print(report.table(label=args.checkpoint.stem))
    return 0


def cmd_gradcheck(args, values) -> int:
    from .gradcheck import check_model_gradients
    from .model import GraphContext, HypeTKG
    from .toy import make_toy_dataset
    from .data import derive_queries

    seed = values.get("seed", 0)
    if args.dim % 2 or args.dim % 4:
        raise UsageError("--dim must be a multiple of 4 (complex pairs and 4 attention heads)")
    ti = dict(n_ti_facts=max(2, args.facts // 3), n_ti_entities=2) if args.ti else {}
    ds = augment_inverse(make_toy_dataset(n_entities=args.entities, n_facts=args.facts, seed=seed, **ti))
    cfg = ModelConfig(dim=args.dim, dropout=0.0, use_ti=args.ti)
    model = HypeTKG.for_dataset(ds, cfg, seed=seed)
    graph = GraphContext.from_dataset(ds, cfg)
    queries = derive_queries(ds.train)
    report = check_model_gradients(model, queries, graph, tol=args.tol, max_coords=args.max_coords, seed=seed)
    print(report.format())
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 2


def cmd_dump_attention(args, values) -> int:
    from .data import derive_queries
    from .decoder import QueryTrace
    from .model import GraphContext
    from .training import load_checkpoint
    from . import autodiff as ad

    ds = _load_augmented(args.dataset)
    model, meta = load_checkpoint(args.checkpoint, ds)
    graph = GraphContext.from_dataset(ds, model.cfg)
    queries = derive_queries(ds.split(args.split))[: args.limit]
    ent, rel = ds.entity_vocab.token, ds.relation_vocab.token

    def ti_rel(r: int) -> str:
        n = ds.n_ti_relations
        return ds.ti_relation_vocab.token(r) if r < n else ds.ti_relation_vocab.token(r - n) + INVERSE_SUFFIX

    trace = QueryTrace()
    with ad.no_grad():
        h = model.encode(graph, None, np.random.default_rng(values.get("seed", meta.get("seed", 0))))
        model.decoder.score_all(queries, h, graph.pool, graph.ti, None, trace)
    out = []
    for i, q in enumerate(queries):
        entry: dict[str, Any] = {
            "query": [ent(q.subject), rel(q.relation), "?", ds.time_vocab.token(q.time)],
            "qualifiers": [[rel(x.relation), ent(x.entity)] for x in q.qualifiers],
            "answer": ent(q.ground_truth),
        }
        pool = trace.pools[i] if i < len(trace.pools) else []
        entry["subject_related_qualifiers"] = [[rel(x.relation), ent(x.entity)] for x in pool]
        entry["eta"] = trace.eta[i].tolist() if pool else []
        ti_nbrs = trace.ti_neighbors[i] if i < len(trace.ti_neighbors) else []
        entry["ti_neighbors"] = [[ti_rel(r), ent(e)] for e, r in ti_nbrs]
        entry["neighbor_attention"] = [
            {
                "neighbor": [ent(n.subject), rel(n.relation), ds.time_vocab.token(n.time)],
                "qualifiers": [[rel(x.relation), ent(x.entity)] for x in n.qualifiers],
                "mean_weight": att.mean(axis=1).tolist(),
            }
            for n, att in model.encoder.neighbor_attention(q.subject, graph.temporal)
        ]
        out.append(entry)
    text = json.dumps(out, indent=1, ensure_ascii=False)
    if args.out is not None:
        args.out.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
        )
        known = ["seed", "workers"]
        if args.command == "train":
            known += ["preset", *MODEL_OPTIONS, *TRAIN_OPTIONS]
        values, explicit = resolve(args, known)
        if args.command == "build":
            return cmd_build(args, values)
        if args.command == "sample":
            return cmd_sample(args, values)
        if args.command == "stats":
            return cmd_stats(args, values)
        if args.command == "train":
            return cmd_train(args, values, explicit)
        if args.command == "eval":
            return cmd_eval(args, values)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, values)
        if args.command == "dump-attention":
            return cmd_dump_attention(args, values)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, DataFormatError, SamplingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
