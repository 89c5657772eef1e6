#!/usr/bin/env python3
"""End-to-end pipeline on a real corpus: prepare, train, evaluate, report.

A thin orchestration over the CLI for the full-scale run: give it the corpus
manifest/scripts plus a popularity file and it prepares splits, trains one
model per requested aspect, evaluates on the test part, and emits comparator
reports for a few test movies. With ``--embedder sentence`` this uses the
pretrained 768-d utterance encoder (hours per aspect without a GPU; vectors
are cached under --cache-dir so reruns are fast).

Example:
    python scripts/run_full_pipeline.py \
        --manifest data/manifest.tsv --scripts data/scripts \
        --popularity data/popularity.tsv --out runs/full \
        --aspects Violence Profanity --embedder sentence
"""

import argparse
import sys
from pathlib import Path

from scriptsev.cli import main as cli


def run(step: list[str]) -> None:
    print(f"\n$ scriptsev {' '.join(step)}", flush=True)
    code = cli(step)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--scripts", required=True)
    parser.add_argument("--popularity", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--aspects", nargs="+", default=["Profanity"])
    parser.add_argument("--embedder", choices=("hash", "sentence"), default="sentence")
    parser.add_argument("--embed-dim", type=int, default=None)
    parser.add_argument("--cache-dir", default=None)
    parser.add_argument("--hidden-dim", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--report-movies", type=int, default=3,
                        help="test movies to render comparator reports for")
    args = parser.parse_args()

    out = Path(args.out)
    prepared = out / "prepared"
    run([
        "prepare", "--manifest", args.manifest, "--scripts", args.scripts,
        "--min-votes", "5", "--seed", str(args.seed), "--out", str(prepared),
    ])

    for aspect in args.aspects:
        tag = aspect.lower()
        model_path = out / f"{tag}.model.bin"
        common = [
            "--manifest", str(prepared / "manifest.filtered.tsv"),
            "--scripts", args.scripts,
            "--split", str(prepared / f"{tag}.split.tsv"),
        ]
        embed = ["--embedder", args.embedder]
        if args.embed_dim:
            embed += ["--embed-dim", str(args.embed_dim)]
        if args.cache_dir:
            embed += ["--cache-dir", args.cache_dir]
        run([
            "train", *common, "--aspect", aspect, "--arch", "rnn_trans", *embed,
            "--hidden-dim", str(args.hidden_dim), "--seed", str(args.seed),
            "--out", str(model_path),
        ])
        run([
            "eval", *common, "--model", str(model_path), "--part", "test",
            "--out", str(out / f"{tag}.eval"),
        ])

        from scriptsev.corpus import read_split

        split = read_split(prepared / f"{tag}.split.tsv")
        test_movies = sorted(m for m, part in split.items() if part == "test")
        for movie in test_movies[: args.report_movies]:
            run([
                "report", *common, "--model", str(model_path), "--movie", movie,
                "--popularity", args.popularity,
                "--out", str(out / f"{tag}.report.{movie}"),
            ])


if __name__ == "__main__":
    main()
