"""Command-line front end.

Subcommands cover the full pipeline: ``synth`` writes a synthetic price
directory, ``preprocess`` turns prices into a chart corpus, ``search``
evolves a pattern against a corpus, ``evaluate`` scores a saved pattern
on one split, and ``export-overlay`` dumps its matched charts for
plotting.  Options resolve as defaults < config file < command line.

Every command that writes an output directory drops a ``manifest.json``
first: tool version, resolved configuration, seed, and sha256 digests of
the inputs, so any result can be traced back to what produced it.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .evaluator import EvalConfig, fitness
from .neat import EvolutionConfig
from .preprocess import (
    INSTRUMENT_INDEX,
    PreprocessConfig,
    SplitRange,
    build_corpus,
    load_price_directory,
    write_price_directory,
)
from .search import SearchOptions, export_overlay, results_row, run_search, write_run_outputs
from .substrate import express, phenotype_from_text, standard_substrates
from .synthdata import SynthConfig, generate, write_injections
from .types import (
    ConfigError,
    CorpusFormatError,
    Dataset,
    SPLIT_NAMES,
    load_dataset,
    save_dataset,
)
from . import cppn

log = logging.getLogger(__name__)

# named sub-streams of the root seed, so the same root never feeds two
# consumers the same entropy
EVOLUTION_STREAM = 1
DROPOUT_STREAM = 2
SYNTH_STREAM = 3


def stream_seed(root: int, stream: int) -> int:
    return int(np.random.SeedSequence((root, stream)).generate_state(1, np.uint64)[0])


def _setup_logging(verbose: bool) -> None:
    level_name = os.environ.get("CHARTEVO_LOG", "INFO" if verbose else "WARNING")
    logging.basicConfig(
        level=getattr(logging, level_name.upper(), logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _build_config(cls, section: dict, overrides: dict):
    """Merge a config-file section and CLI overrides onto dataclass defaults."""
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - valid)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)


def _parse_date(value) -> datetime.date:
    if isinstance(value, datetime.date):
        return value
    return datetime.date.fromisoformat(value)


def _convert_preprocess_section(section: dict) -> dict:
    section = dict(section)
    if "horizons" in section:
        section["horizons"] = tuple(int(k) for k in section["horizons"])
    if "split_ranges" in section:
        section["split_ranges"] = {
            name: SplitRange(_parse_date(span[0]), _parse_date(span[1]))
            for name, span in section["split_ranges"].items()
        }
    return section


def _convert_synth_section(section: dict) -> dict:
    section = dict(section)
    if "start_date" in section:
        section["start_date"] = _parse_date(section["start_date"])
    return section


def _jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, datetime.date):
        return value.isoformat()
    return value


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, configs: dict, seed: int, inputs) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool": "chartevo",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": {name: _jsonable(cfg) for name, cfg in configs.items()},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(directory) -> dict[str, Dataset]:
    corpus = {}
    for name in SPLIT_NAMES:
        path = os.path.join(directory, f"{name}.npz")
        if os.path.exists(path):
            corpus[name] = load_dataset(path)
    if not corpus:
        raise CorpusFormatError(f"{directory}: no corpus files found (expected <split>.npz)")
    return corpus


def _corpus_input_paths(directory) -> list[str]:
    return [
        os.path.join(directory, f"{name}.npz")
        for name in SPLIT_NAMES
        if os.path.exists(os.path.join(directory, f"{name}.npz"))
    ]


def _cmd_synth(args) -> int:
    section = _convert_synth_section(_load_config_file(args.config).get("synth", {}))
    overrides = {
        "n_instruments": args.instruments,
        "n_days": args.days,
        "injection_rate": args.injection_rate,
        "drift": args.drift,
    }
    if args.seed is not None:
        overrides["seed"] = stream_seed(args.seed, SYNTH_STREAM)
    elif "seed" not in section:
        section["seed"] = stream_seed(0, SYNTH_STREAM)
    config = _build_config(SynthConfig, section, overrides)
    series_list, injections = generate(config)
    write_manifest(args.out, "synth", {"synth": config}, args.seed or 0, [])
    write_price_directory(args.out, series_list)
    write_injections(os.path.join(args.out, "injections.csv"), injections)
    print(f"wrote {len(series_list)} instruments, {len(injections)} injections to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    section = _convert_preprocess_section(_load_config_file(args.config).get("preprocess", {}))
    config = _build_config(PreprocessConfig, section, {})
    series_list = load_price_directory(args.prices)
    corpus = build_corpus(series_list, config)
    inputs = [os.path.join(args.prices, INSTRUMENT_INDEX)]
    write_manifest(args.out, "preprocess", {"preprocess": config}, 0, inputs)
    for name, dataset in corpus.items():
        save_dataset(os.path.join(args.out, f"{name}.npz"), dataset)
        print(f"{name}: {len(dataset)} charts")
    return 0


def _search_configs(args) -> tuple[EvolutionConfig, EvalConfig, SearchOptions]:
    file_cfg = _load_config_file(args.config)
    evolution_section = dict(file_cfg.get("evolution", {}))
    eval_section = dict(file_cfg.get("eval", {}))
    search_section = dict(file_cfg.get("search", {}))

    evolution_overrides = {
        "population_size": args.population,
        "generations": args.generations,
    }
    if args.seed is not None:
        evolution_overrides["rng_seed"] = stream_seed(args.seed, EVOLUTION_STREAM)
    elif "rng_seed" not in evolution_section:
        evolution_section["rng_seed"] = stream_seed(0, EVOLUTION_STREAM)

    eval_overrides = {"k": args.k, "alpha": args.alpha}
    if args.seed is not None:
        eval_overrides["rng_seed"] = stream_seed(args.seed, DROPOUT_STREAM)
    elif "rng_seed" not in eval_section:
        eval_section["rng_seed"] = stream_seed(0, DROPOUT_STREAM)

    options_overrides = {"substrate": args.substrate}
    evolution_config = _build_config(EvolutionConfig, evolution_section, evolution_overrides)
    eval_config = _build_config(EvalConfig, eval_section, eval_overrides)
    options = _build_config(SearchOptions, search_section, options_overrides)
    return evolution_config, eval_config, options


def _cmd_search(args) -> int:
    evolution_config, eval_config, options = _search_configs(args)
    corpus = load_corpus(args.corpus)
    write_manifest(
        args.out,
        "search",
        {"evolution": evolution_config, "eval": eval_config, "search": options},
        args.seed or 0,
        _corpus_input_paths(args.corpus),
    )
    run = run_search(
        corpus,
        evolution_config,
        eval_config,
        options,
        workers=args.workers,
        checkpoint_dir=os.path.join(args.out, "checkpoints"),
        resume_from=args.resume,
    )
    write_run_outputs(run, args.out)
    overlay_split = "test" if "test" in corpus else "training"
    count = export_overlay(
        run.selected.network, corpus[overlay_split], os.path.join(args.out, "overlay.csv")
    )
    log.info("overlay: %d matched charts on %s", count, overlay_split)
    print(results_row(run), end="")
    return 0


def _load_pattern(args):
    with open(args.pattern, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        if text.startswith(cppn.GENOME_MAGIC):
            genome = cppn.from_text(text)
            substrates = standard_substrates()
            if args.substrate not in substrates:
                raise ConfigError(f"unknown substrate {args.substrate!r}")
            return express(genome, substrates[args.substrate])
        return phenotype_from_text(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse pattern file {args.pattern}: {exc}") from exc


def _cmd_evaluate(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.split not in corpus:
        raise ConfigError(f"corpus has no {args.split!r} split")
    net = _load_pattern(args)
    config = EvalConfig(k=args.k, alpha=args.alpha, dropout_enabled=False)
    report = fitness(net, corpus[args.split], config)
    sys.stdout.write(report.to_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
    return 0


def _cmd_export_overlay(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.split not in corpus:
        raise ConfigError(f"corpus has no {args.split!r} split")
    net = _load_pattern(args)
    count = export_overlay(net, corpus[args.split], args.out)
    print(f"{count} matched charts written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartevo",
        description="Evolve chart-pattern discriminants over price corpora.",
    )
    parser.add_argument("--version", action="version", version=f"chartevo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed for all randomness")
        p.add_argument("--verbose", action="store_true", help="log progress at INFO")

    p = sub.add_parser("synth", help="generate a synthetic price directory")
    common(p)
    p.add_argument("--out", required=True, help="output price directory")
    p.add_argument("--instruments", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--injection-rate", dest="injection_rate", type=float)
    p.add_argument("--drift", type=float)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="build a chart corpus from prices")
    common(p)
    p.add_argument("--prices", required=True, help="price directory with manifest.json")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("search", help="run the evolutionary pattern search")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--substrate", choices=sorted(standard_substrates()))
    p.add_argument("--k", type=int, help="return horizon in trading days")
    p.add_argument("--alpha", type=float, help="match-count penalty scale")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("evaluate", help="score a saved pattern on one split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pattern", required=True, help=".net phenotype or .cppn genome file")
    p.add_argument("--substrate", default="network", help="used when --pattern is a genome")
    p.add_argument("--split", default="test", choices=SPLIT_NAMES)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--alpha", type=float, default=100000.0)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-overlay", help="dump a pattern's matched charts as CSV")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pattern", required=True)
    p.add_argument("--substrate", default="network")
    p.add_argument("--split", default="test", choices=SPLIT_NAMES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_overlay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    try:
        return args.func(args)
    except (ConfigError, CorpusFormatError) as exc:
        print(f"chartevo: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"chartevo: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
