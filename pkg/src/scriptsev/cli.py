"""Command-line entry point: corpus preparation, training, evaluation, reports.

Subcommands: ``prepare``, ``stats``, ``train``, ``eval``, ``crossval``,
``compare``, ``report``. A flat ``key=value`` config file can seed any
subcommand's options (flags win); all randomness flows from ``--seed`` and
every written artifact embeds the hash of the configuration that produced it.

Exit codes: 0 success, 1 usage, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, interpret, siamese
from .backbones import ARCHITECTURES, BackboneConfig
from .corpus import Aspect, document_from_lines
from .embedding import (
    HashEmbedder,
    SentenceTransformerEmbedder,
    load_word_embeddings,
)
from .errors import DataError, ProviderError, TrainingError, UnsupportedOperationError
from .utils import atomic_write_text, config_hash, derive_seed

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3

CACHE_ENV_VAR = "SCRIPTSEV_CACHE"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise _UsageError(message)


def _read_config_file(path: str) -> list[tuple[str, str]]:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise _UsageError(f"config file not found: {cfg_path}")
    entries = []
    for line_no, line in enumerate(cfg_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"{cfg_path}:{line_no}: expected key=value")
        key, value = line.split("=", 1)
        entries.append((key.strip(), value.strip()))
    return entries


def _inject_config(argv: list[str]) -> list[str]:
    """Expand --config entries into CLI tokens placed before user flags."""
    if not argv or argv[0].startswith("-"):
        return argv
    cfg_value = None
    rest = argv[1:]
    for i, token in enumerate(rest):
        if token == "--config" and i + 1 < len(rest):
            cfg_value = rest[i + 1]
            break
        if token.startswith("--config="):
            cfg_value = token.split("=", 1)[1]
            break
    if cfg_value is None:
        return argv
    tokens: list[str] = []
    for key, value in _read_config_file(cfg_value):
        flag = "--" + key.replace("_", "-")
        if value.lower() == "true":
            tokens.append(flag)
        elif value.lower() == "false":
            tokens.append("--no-" + key.replace("_", "-"))
        else:
            tokens.extend([flag, value])
    return [argv[0], *tokens, *rest]


def _args_hash(args: argparse.Namespace) -> str:
    payload = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    return config_hash(payload)


def _parse_kernel_sizes(raw: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise _UsageError(f"bad kernel sizes {raw!r}; expected e.g. 3,4,5") from None
    if not sizes:
        raise _UsageError("kernel sizes must not be empty")
    return sizes


def _parse_ratios(raw: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in raw.split(","))
    except ValueError:
        raise _UsageError(f"bad ratios {raw!r}; expected e.g. 0.8,0.1,0.1") from None
    if len(parts) != 3:
        raise _UsageError("ratios must be a train,dev,test triple")
    return parts


def _resolve_source(args: argparse.Namespace, architecture: str):
    """Build the embedding source (provider or word table) from CLI options."""
    word_level = architecture in ("textrcnn", "textcnn", "avg_embed")
    if word_level:
        if not args.word_vectors:
            raise DataError(f"--word-vectors is required for --arch {architecture}")
        return load_word_embeddings(args.word_vectors, dim=args.word_dim)
    if args.embedder == "hash":
        return HashEmbedder(dim=args.embed_dim or 64)
    cache_dir = args.cache_dir or os.environ.get(CACHE_ENV_VAR)
    return SentenceTransformerEmbedder(model_name=args.st_model, cache_dir=cache_dir)


def _input_dim(args: argparse.Namespace, source) -> int:
    """Encoder input width; avoids loading the sentence backend just for its dim."""
    if isinstance(source, SentenceTransformerEmbedder):
        return args.embed_dim or 768
    return source.dim


def _backbone_config(args: argparse.Namespace, input_dim: int) -> BackboneConfig:
    return BackboneConfig(
        architecture=args.arch,
        input_dim=input_dim,
        hidden_dim=args.hidden_dim,
        num_layers=args.layers,
        projection_dim=args.projection_dim,
        kernel_sizes=_parse_kernel_sizes(args.kernel_sizes),
        channels=args.channels,
        dropout=args.dropout,
    )


def _train_config(args: argparse.Namespace) -> siamese.TrainConfig:
    return siamese.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        pairs_per_epoch=args.pairs_per_epoch,
        max_epochs=args.max_epochs,
        patience=args.patience,
        rank_loss_weight=args.rank_weight,
        seed=args.seed,
    )


def _load_aspect_dataset(args: argparse.Namespace, aspect: Aspect, split_path=None):
    datasets = corpus_mod.load_corpus(args.manifest, args.scripts)
    dataset = corpus_mod.filter_by_votes(datasets[aspect], args.min_votes)
    if split_path is not None:
        dataset = dataset.with_split(corpus_mod.read_split(split_path))
    return dataset


def _load_model_with_source(args: argparse.Namespace) -> siamese.SiameseModel:
    word_table = None
    if getattr(args, "word_vectors", None):
        word_table = load_word_embeddings(args.word_vectors, dim=args.word_dim)
    return siamese.load_model(args.model, word_table=word_table)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> None:
    ratios = _parse_ratios(args.ratios)
    out_dir = Path(args.out)
    datasets = corpus_mod.load_corpus(args.manifest, args.scripts)
    run_hash = _args_hash(args)

    filtered: dict[Aspect, corpus_mod.AspectDataset] = {}
    for aspect, dataset in datasets.items():
        kept = corpus_mod.filter_by_votes(dataset, args.min_votes)
        if not kept.instances:
            log.info("%s: no instances after filtering, skipped", aspect.value)
            continue
        split_seed = derive_seed(args.seed, f"split:{aspect.value}")
        kept = corpus_mod.stratified_split(kept, ratios=ratios, seed=split_seed)
        filtered[aspect] = kept

        assert kept.split is not None
        corpus_mod.write_split(
            kept.split,
            out_dir / f"{aspect.column}.split.tsv",
            comments=[f"config_hash={run_hash}", f"seed={args.seed}"],
        )
        stats = corpus_mod.corpus_stats(kept)
        payload = stats.to_json_dict()
        payload["config_hash"] = run_hash
        atomic_write_text(
            out_dir / f"{aspect.column}.stats.json",
            json.dumps(payload, indent=2, sort_keys=True) + "\n",
        )
        atomic_write_text(
            out_dir / f"{aspect.column}.stats.txt",
            f"# config_hash: {run_hash}\n{aspect.value}\n{stats.to_text()}\n",
        )
        parts = {p: len(kept.part(p)) for p in corpus_mod.PARTS}
        print(
            f"{aspect.value}: {len(kept)} instances "
            f"(train {parts['train']} / dev {parts['dev']} / test {parts['test']})"
        )

    if not filtered:
        raise DataError("no aspect has instances after filtering")
    corpus_mod.write_manifest(filtered, out_dir / "manifest.filtered.tsv")
    print(f"wrote {out_dir}/manifest.filtered.tsv and per-aspect split/stats files")


def cmd_stats(args: argparse.Namespace) -> None:
    datasets = corpus_mod.load_corpus(args.manifest, args.scripts)
    aspects = [Aspect.from_name(args.aspect)] if args.aspect else list(Aspect)
    for aspect in aspects:
        dataset = corpus_mod.filter_by_votes(datasets[aspect], args.min_votes)
        if not dataset.instances:
            print(f"{aspect.value}: empty")
            continue
        print(aspect.value)
        print(corpus_mod.corpus_stats(dataset).to_text())
        print()


def cmd_train(args: argparse.Namespace) -> None:
    aspect = Aspect.from_name(args.aspect)
    dataset = _load_aspect_dataset(args, aspect, split_path=args.split)
    source = _resolve_source(args, args.arch)
    backbone = _backbone_config(args, _input_dim(args, source))
    train_cfg = _train_config(args)

    log_path = args.log or f"{args.out}.log"
    run_hash = _args_hash(args)
    model = siamese.train(train_cfg, dataset, backbone, args.multitask, source)
    model.config_hash = run_hash
    log_lines = [f"# config_hash: {run_hash}", f"# seed: {args.seed}", *model.metrics_lines]
    atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    siamese.save_model(model, args.out)
    print(
        f"trained {args.arch} ({'multitask' if args.multitask else 'classification-only'}) "
        f"on {aspect.value}: best dev macro F1 {model.best_dev_macro_f1:.4f}"
    )
    print(f"model: {args.out}\nmetrics log: {log_path}")


def cmd_eval(args: argparse.Namespace) -> None:
    model = _load_model_with_source(args)
    if args.aspect and Aspect.from_name(args.aspect) != model.aspect:
        raise DataError(
            f"model was trained for {model.aspect.value}, not {args.aspect}"
        )
    dataset = _load_aspect_dataset(args, model.aspect, split_path=args.split)
    instances = dataset.part(args.part)
    if not instances:
        raise DataError(f"part {args.part!r} is empty")
    pred, _ = model.predict_batch([inst.document for inst in instances])
    report = evaluation.evaluate([inst.label for inst in instances], pred)
    meta = {
        "aspect": model.aspect.value,
        "part": args.part,
        "config_hash": _args_hash(args),
        "model_config_hash": model.config_hash,
    }
    if args.out:
        evaluation.write_eval_report(report, f"{args.out}.txt", f"{args.out}.json", meta)
        print(f"wrote {args.out}.txt and {args.out}.json")
    print(report.to_text())


def cmd_crossval(args: argparse.Namespace) -> None:
    aspect = Aspect.from_name(args.aspect)
    dataset = _load_aspect_dataset(args, aspect)
    source = _resolve_source(args, args.arch)
    backbone = _backbone_config(args, _input_dim(args, source))
    train_cfg = _train_config(args)
    report = evaluation.cross_validate(
        dataset,
        backbone,
        train_cfg,
        source,
        k=args.k,
        multitask=args.multitask,
        seed=args.seed,
    )
    tsv = f"# config_hash: {_args_hash(args)}\n{report.to_tsv()}\n"
    if args.out:
        atomic_write_text(args.out, tsv)
        print(f"wrote {args.out}")
    print(report.to_tsv())


def _document_for(args: argparse.Namespace, movie_id: str | None, file_path: str | None):
    if file_path:
        path = Path(file_path)
        if not path.is_file():
            raise DataError(f"script file not found: {path}")
        return document_from_lines(path.stem, path.stem, path.read_text(encoding="utf-8").splitlines())
    if not movie_id:
        raise DataError("pass a movie id or a script file")
    if not args.scripts:
        raise DataError("--scripts is required when comparing by movie id")
    path = Path(args.scripts) / f"{movie_id}.txt"
    if not path.is_file():
        raise DataError(f"script file missing for movie {movie_id!r}: {path}")
    return document_from_lines(movie_id, movie_id, path.read_text(encoding="utf-8").splitlines())


def cmd_compare(args: argparse.Namespace) -> None:
    model = _load_model_with_source(args)
    left = _document_for(args, args.left, args.left_file)
    right = _document_for(args, args.right, args.right_file)
    label, probs = model.compare(left, right)
    result = {
        "aspect": model.aspect.value,
        "left": left.movie_id,
        "right": right.movie_id,
        "label": label.name,
        "probabilities": {
            "LOWER": probs[0],
            "EQUAL": probs[1],
            "HIGHER": probs[2],
        },
        "config_hash": _args_hash(args),
    }
    if args.out:
        atomic_write_text(args.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(
        f"{left.movie_id} vs {right.movie_id} [{model.aspect.value}]: {label.name} "
        f"(lower {probs[0]:.3f} / equal {probs[1]:.3f} / higher {probs[2]:.3f})"
    )


_POOL_PARTS = {
    "train": ("train",),
    "dev": ("dev",),
    "test": ("test",),
    "train+dev": ("train", "dev"),
    "all": ("train", "dev", "test"),
}


def cmd_report(args: argparse.Namespace) -> None:
    model = _load_model_with_source(args)
    dataset = _load_aspect_dataset(args, model.aspect, split_path=args.split)
    popularity = interpret.read_popularity(args.popularity)

    pool_parts = _POOL_PARTS[args.pool]
    pool = [inst for part in pool_parts for inst in dataset.part(part)]
    pool_ds = corpus_mod.AspectDataset(aspect=model.aspect, instances=pool)
    comparators = interpret.select_comparators(
        pool_ds,
        popularity,
        min_popularity=args.min_popularity,
        exclude={args.movie},
    )

    by_id = {inst.movie_id: inst for inst in dataset.instances}
    if args.movie in by_id:
        movie_doc = by_id[args.movie].document
        gold = by_id[args.movie].label
    else:
        movie_doc = _document_for(args, args.movie, None)
        gold = None
    report = interpret.comparator_report(model, movie_doc, comparators, gold=gold)
    meta = {"config_hash": _args_hash(args), "pool": args.pool}
    if args.out:
        interpret.write_comparator_report(report, f"{args.out}.txt", f"{args.out}.json", meta)
        print(f"wrote {args.out}.txt and {args.out}.json")
    print(report.to_text())


# ---------------------------------------------------------------------------
# parser construction
# ---------------------------------------------------------------------------


def _add_corpus_options(parser: argparse.ArgumentParser, with_min_votes: bool = True) -> None:
    parser.add_argument("--manifest", required=True, help="tab-delimited corpus manifest")
    parser.add_argument("--scripts", required=True, help="directory of <movie_id>.txt scripts")
    if with_min_votes:
        parser.add_argument("--min-votes", type=int, default=5,
                            help="drop instances with fewer severity votes (default 5)")


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", choices=ARCHITECTURES, default="rnn_trans")
    parser.add_argument("--embedder", choices=("hash", "sentence"), default="hash",
                        help="sentence provider for rnn_trans (default hash)")
    parser.add_argument("--embed-dim", type=int, default=None,
                        help="sentence embedding width (hash default 64, sentence 768)")
    parser.add_argument("--st-model", default="bert-large-nli-mean-tokens",
                        help="sentence-transformers model name")
    parser.add_argument("--cache-dir", default=None,
                        help=f"utterance vector cache dir (or ${CACHE_ENV_VAR})")
    parser.add_argument("--word-vectors", default=None,
                        help="word vector file for textrcnn/textcnn/avg_embed")
    parser.add_argument("--word-dim", type=int, default=300)
    parser.add_argument("--hidden-dim", type=int, default=200)
    parser.add_argument("--layers", type=int, default=1)
    parser.add_argument("--projection-dim", type=int, default=200)
    parser.add_argument("--kernel-sizes", default="3,4,5")
    parser.add_argument("--channels", type=int, default=10)
    parser.add_argument("--dropout", type=float, default=0.0)


def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--pairs-per-epoch", type=int, default=None)
    parser.add_argument("--max-epochs", type=int, default=30)
    parser.add_argument("--patience", type=int, default=5)
    parser.add_argument("--rank-weight", type=float, default=1.0)
    parser.add_argument("--multitask", action=argparse.BooleanOptionalAction, default=True)


def build_parser() -> _Parser:
    parser = _Parser(prog="scriptsev", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(config="flat key=value config file; explicit flags win")

    p = sub.add_parser("prepare", help="filter, split, and summarize a corpus")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p, with_min_votes=False)
    p.add_argument("--min-votes", type=int, default=1,
                   help="drop instances with fewer severity votes (default 1: keep all)")
    p.add_argument("--aspect", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a severity model for one aspect")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p)
    p.add_argument("--split", required=True, help="split file from prepare")
    p.add_argument("--aspect", required=True)
    _add_model_options(p)
    _add_train_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model output file")
    p.add_argument("--log", default=None, help="metrics log path (default <out>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on one part")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--aspect", default=None, help="must match the model when given")
    p.add_argument("--part", choices=corpus_mod.PARTS, default="test")
    p.add_argument("--word-vectors", default=None)
    p.add_argument("--word-dim", type=int, default=300)
    p.add_argument("--out", default=None, help="report path prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p)
    p.add_argument("--aspect", required=True)
    _add_model_options(p)
    _add_train_options(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-fold TSV path")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("compare", help="rank two movies' severity against each other")
    p.add_argument("--config", help=common["config"])
    p.add_argument("--model", required=True)
    p.add_argument("--scripts", default=None)
    p.add_argument("--left", default=None, help="left movie id")
    p.add_argument("--right", default=None, help="right movie id")
    p.add_argument("--left-file", default=None, help="left script file")
    p.add_argument("--right-file", default=None, help="right script file")
    p.add_argument("--word-vectors", default=None)
    p.add_argument("--word-dim", type=int, default=300)
    p.add_argument("--out", default=None, help="JSON result path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="comparator-based interpretability report")
    p.add_argument("--config", help=common["config"])
    _add_corpus_options(p)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--movie", required=True, help="test movie id")
    p.add_argument("--popularity", required=True, help="movie_id<TAB>rating_count file")
    p.add_argument("--min-popularity", type=int, default=interpret.DEFAULT_MIN_POPULARITY)
    p.add_argument("--pool", choices=sorted(_POOL_PARTS), default="train+dev")
    p.add_argument("--word-vectors", default=None)
    p.add_argument("--word-dim", type=int, default=300)
    p.add_argument("--out", default=None, help="report path prefix")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_inject_config(argv))
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ProviderError, UnsupportedOperationError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except TrainingError as exc:
        log.error("training failed: %s", exc)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
