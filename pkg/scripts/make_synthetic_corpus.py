#!/usr/bin/env python3
"""Write a planted-signal corpus to disk in the CLI's on-disk formats.

Produces a manifest, one script file per movie, and a popularity table, so
the full prepare -> train -> eval -> report pipeline can be exercised without
any external data. Severity is a deterministic staircase of the count of one
marker token, which makes every downstream metric interpretable.

Example:
    python scripts/make_synthetic_corpus.py --out /tmp/synth --n-docs 600 --seed 1234
"""

import argparse
from pathlib import Path

from scriptsev.corpus import Aspect, save_corpus
from scriptsev.synthetic import make_corpus, make_popularity
from scriptsev.utils import atomic_write_text


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n-docs", type=int, default=600)
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--aspect", default="Profanity")
    args = parser.parse_args()

    out = Path(args.out)
    aspect = Aspect.from_name(args.aspect)
    dataset = make_corpus(n_docs=args.n_docs, seed=args.seed, aspect=aspect)
    save_corpus({aspect: dataset}, out / "manifest.tsv", out / "scripts")

    popularity = make_popularity(dataset, seed=args.seed + 1)
    lines = [f"{mid}\t{count}" for mid, count in sorted(popularity.items())]
    atomic_write_text(out / "popularity.tsv", "\n".join(lines) + "\n")

    print(f"wrote {args.n_docs} scripts under {out}")
    print(f"  manifest:   {out / 'manifest.tsv'}")
    print(f"  scripts:    {out / 'scripts'}")
    print(f"  popularity: {out / 'popularity.tsv'}")


if __name__ == "__main__":
    main()
