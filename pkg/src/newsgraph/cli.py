"""Command-line entry point: ``newsgraph run <stage>``, ``newsgraph run-all``, ``newsgraph fixture``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import EXPERIMENTS, PipelineConfig
from .embedding import WalkConfig
from .market import INDEX_NAMES
from .pipeline import STAGES, Pipeline, StageError
from .synthetic import write_fixture


def bundled_fixture() -> Path:
    """Directory of the 8-week synthetic fixture shipped with the package."""
    return Path(str(resources.files("newsgraph") / "data" / "fixture"))


def fixture_config(output_dir: str | Path = "out", **overrides) -> PipelineConfig:
    d = bundled_fixture()
    base = {
        "corpus_path": str(d / "corpus.jsonl"),
        "index_csv_paths": {n: str(d / f"{n.lower()}.csv") for n in INDEX_NAMES},
        "output_dir": str(output_dir),
        "exclude_weeks": [],
        "start_date": "2022-01-01",
        "min_appearances": 2,
    }
    base.update(overrides)
    return PipelineConfig.from_dict(base)


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _k_range(s: str) -> list[int]:
    """``2-14`` or ``2,3,5``."""
    if "-" in s and "," not in s:
        lo, hi = s.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in _csv_list(s)]


def _index_pair(s: str) -> tuple[str, str]:
    name, sep, path = s.partition("=")
    if not sep or name.upper() not in INDEX_NAMES:
        raise argparse.ArgumentTypeError(f"expected NAME=path with NAME in {INDEX_NAMES}, got {s!r}")
    return name.upper(), path


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file with PipelineConfig fields")
    p.add_argument("--fixture", action="store_true", help="use the bundled synthetic fixture as input")
    p.add_argument("--corpus", dest="corpus_path")
    p.add_argument("--index", action="append", type=_index_pair, metavar="NAME=PATH", help="index CSV, repeat for all four")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--exclude-weeks", type=_csv_list, metavar="DATE,...")
    p.add_argument("--start-date")
    p.add_argument("--k-range", type=_k_range, metavar="LO-HI")
    p.add_argument("--beta", type=float)
    p.add_argument("--nmf-seeds", type=int)
    p.add_argument("--stability-threshold", type=float)
    p.add_argument("--edge-threshold", help="fraction, e.g. 1/6")
    p.add_argument("--dislocation-mean", type=float)
    p.add_argument("--zscore-window", type=int)
    p.add_argument("--experiment", choices=EXPERIMENTS, action="append", dest="experiments")
    p.add_argument("--alpha", type=float)
    p.add_argument("--smote-neighbors", type=int)
    p.add_argument("--keywords", type=_csv_list, metavar="ENTITY,...")
    p.add_argument("--min-appearances", type=int)
    walk = p.add_argument_group("node2vec")
    for f in dataclasses.fields(WalkConfig):
        if f.name == "seed":
            continue
        walk.add_argument(f"--{f.name.replace('_', '-')}", dest=f"walk_{f.name}", type=type(f.default))
    p.add_argument("--force", action="store_true", help="overwrite artifacts made under another config")
    p.add_argument("-v", "--verbose", action="count", default=0)


_PLAIN = (
    "corpus_path", "output_dir", "seed", "exclude_weeks", "start_date", "k_range", "beta", "nmf_seeds",
    "stability_threshold", "edge_threshold", "dislocation_mean", "zscore_window", "experiments", "alpha",
    "smote_neighbors", "keywords", "min_appearances",
)


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        data = PipelineConfig.from_file(args.config).to_dict()
    elif args.fixture:
        data = fixture_config().to_dict()
    else:
        data = PipelineConfig().to_dict()
    for name in _PLAIN:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    if args.index:
        data["index_csv_paths"] = {**data["index_csv_paths"], **dict(args.index)}
    walk = dict(data["walk"])
    for f in dataclasses.fields(WalkConfig):
        v = getattr(args, f"walk_{f.name}", None)
        if v is not None:
            walk[f.name] = v
    data["walk"] = walk
    cfg = PipelineConfig.from_dict(data)
    if not cfg.corpus_path:
        raise ValueError("no corpus given; use --corpus, --config or --fixture")
    if not cfg.index_csv_paths:
        raise ValueError("no index series given; use --index NAME=PATH for each of " + ", ".join(INDEX_NAMES))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="newsgraph", description="News co-occurrence graphs and market dislocations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one stage")
    run.add_argument("stage", choices=STAGES)
    _add_config_flags(run)
    run_all = sub.add_parser("run-all", help="run every stage in dependency order")
    _add_config_flags(run_all)
    fx = sub.add_parser("fixture", help="write a synthetic corpus and index series")
    fx.add_argument("directory")
    fx.add_argument("--weeks", type=int, default=8)
    fx.add_argument("--articles-per-week", type=int, default=40)
    fx.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fixture":
        paths = write_fixture(args.directory, args.weeks, args.articles_per_week, seed=args.seed)
        print(json.dumps({"corpus": str(paths["corpus"]), "indices": {k: str(v) for k, v in paths["indices"].items()}}))
        return 0
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg, force=args.force)
    try:
        if args.command == "run":
            out = pipe.run_stage(args.stage)
            print(out)
        else:
            pipe.run_all()
            print(pipe.dir("report") / "summary.json")
    except StageError as exc:
        print(f"error: stage {exc.stage}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
