"""Command-line pipeline driver.

One subcommand per stage; a single YAML config governs a run, with
``--override key.path=value`` available for ad-hoc tweaks. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, KnowfuseError, NumericError

STAGES_NEEDING_CONFIG = (
    "kg-ingest",
    "ground",
    "score-relevance",
    "build-graphs",
    "train",
    "eval",
    "predict",
    "make-synthetic",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knowfuse",
        description="Knowledge-infused multimodal classifier pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name: str, help_text: str, workers: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config YAML")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY.PATH=VALUE",
            help="dot-path config override; repeatable",
        )
        if workers:
            p.add_argument("--workers", type=int, default=1, help="process-pool size")
        return p

    ingest = add_stage("kg-ingest", "intern a knowledge-graph edge file into a snapshot")
    ingest.add_argument(
        "--raw-conceptnet",
        action="store_true",
        help="parse the 5-column assertion dump instead of the simplified TSV",
    )
    add_stage("ground", "match record text/captions to concepts and expand candidates",
              workers=True)
    add_stage("score-relevance", "score candidate concepts against each record context",
              workers=True)
    add_stage("build-graphs", "prune candidates and assemble working graphs", workers=True)
    add_stage("train", "train the classifier and checkpoint the best epoch")
    add_stage("eval", "evaluate a checkpoint and write metrics + figures")
    add_stage("predict", "score records with a checkpoint (caption-free)")
    synth = add_stage("make-synthetic", "generate the synthetic separability dataset")
    synth.add_argument("--records", type=int, default=400)

    grad = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    grad.add_argument("--instances", type=int, default=20)
    return parser


def _run(args: argparse.Namespace) -> int:
    from . import pipeline

    if args.command == "gradcheck":
        lines, passed = pipeline.run_gradcheck(instances=args.instances)
        for line in lines:
            print(line)
        return 0 if passed else 4

    config: RunConfig = load_config(args.config, overrides=args.override)
    workers = getattr(args, "workers", 1)

    if args.command == "kg-ingest":
        out = pipeline.run_kg_ingest(config, raw_conceptnet=args.raw_conceptnet)
        print(json.dumps(out["report"].to_dict(), sort_keys=True))
        print(f"store written to {out['store_path']}")
    elif args.command == "ground":
        out = pipeline.run_ground(config, workers=workers)
        print(f"mentions written to {out['mentions_path']}")
        print(f"candidates written to {out['candidates_path']}")
    elif args.command == "score-relevance":
        out = pipeline.run_score_relevance(config, workers=workers)
        print(f"relevance scores written to {out['scores_path']}")
    elif args.command == "build-graphs":
        out = pipeline.run_build_graphs(config, workers=workers)
        print(f"working graphs written to {out['graphs_path']}")
    elif args.command == "train":
        out = pipeline.run_train(config)
        best = out["result"].checkpoint
        print(f"checkpoint written to {out['checkpoint_path']}")
        print(f"best epoch {best.epoch} with validation AUC {best.best_val_auc:.4f}")
        print(f"training log at {out['log_path']}; curves at {out['curves_path']}")
    elif args.command == "eval":
        out = pipeline.run_eval(config)
        print(out["report"].to_json(), end="")
        print(f"metrics written to {out['json']} and {out['csv']}")
    elif args.command == "predict":
        out = pipeline.run_predict(config)
        print(f"predictions written to {out['predictions_path']}")
    elif args.command == "make-synthetic":
        from .synth import SynthSpec, generate

        seed = config.require_seed()
        spec = SynthSpec(n_records=args.records, seed=seed)
        world = generate(spec, config.workdir() / "synthetic")
        print(f"synthetic dataset written under {world.manifest_path.parent}")
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {args.command!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except KnowfuseError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
