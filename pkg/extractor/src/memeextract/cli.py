"""Extractor command line: emit the classifier's input files."""

from __future__ import annotations

import argparse
import json
import sys

from .jobs import ExtractJob, embed_labels, run_extract, run_score


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memeextract",
        description="Produce manifest/blob/score files from a raw meme dataset",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", help="embed a dataset and write a manifest")
    extract.add_argument("--dataset", required=True, help="dataset directory with data.jsonl")
    extract.add_argument("--out", required=True, help="output manifest path")
    extract.add_argument("--prompt-template", default="meme-context",
                         choices=("meme-context", "meme-describe"))
    extract.add_argument("--backend", default="offline", choices=("offline", "hf"))
    extract.add_argument("--dim", type=int, default=384)
    extract.add_argument("--model", action="append", default=[],
                         metavar="ROLE=PATH",
                         help="hf checkpoint per role: clip=..., sentence=..., captioner=...")

    score = sub.add_parser("score", help="write perplexity relevance scores")
    score.add_argument("--manifest", required=True)
    score.add_argument("--graphs", required=True,
                       help="candidates or working-graphs artifact with node labels")
    score.add_argument("--out", required=True)
    score.add_argument("--backend", default="offline", choices=("offline", "hf"))
    score.add_argument("--model", default=None, help="hf masked-LM checkpoint path")

    labels = sub.add_parser("embed-labels", help="embed KG node labels into a text table")
    labels.add_argument("--labels", required=True, help="file with one label per line")
    labels.add_argument("--out", required=True)
    labels.add_argument("--dim", type=int, default=384)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            model_ids = dict(item.split("=", 1) for item in args.model)
            job = ExtractJob(
                dataset_root=args.dataset,
                out_manifest=args.out,
                prompt_template=args.prompt_template,
                backend=args.backend,
                embedding_dim=args.dim,
                model_ids=model_ids,
            )
            out = run_extract(job)
            print(f"manifest written to {out['manifest_path']}")
            print(f"blob written to {out['blob_path']}")
            if out["errors"]:
                print(json.dumps({"skipped": out["errors"]}, sort_keys=True), file=sys.stderr)
        elif args.command == "score":
            out = run_score(args.manifest, args.graphs, args.out,
                            backend=args.backend, model_id=args.model)
            print(f"{out['rows']} scores written to {out['scores_path']} "
                  f"({out['skipped']} skipped) using {out['scorer']}")
        elif args.command == "embed-labels":
            count = embed_labels(args.labels, args.out, dim=args.dim)
            print(f"{count} label embeddings written to {args.out}")
        return 0
    except (ValueError, FileNotFoundError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
