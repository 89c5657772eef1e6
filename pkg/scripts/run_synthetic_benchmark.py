#!/usr/bin/env python3
"""Benchmark multitask vs classification-only training on the planted corpus.

Trains both variants over several seeds on the same synthetic dataset, reports
per-seed and mean test macro F1, pairwise ranking accuracy for the multitask
models, and the paired-randomization p-value for the harm direction (small p
would mean the ranking subtask hurt classification).

Example:
    python scripts/run_synthetic_benchmark.py --seeds 7 8 9 --n-docs 600
"""

import argparse
import time

import numpy as np

from scriptsev.backbones import BackboneConfig
from scriptsev.corpus import stratified_split
from scriptsev.embedding import HashEmbedder
from scriptsev.evaluation import macro_f1, significance_test
from scriptsev.siamese import TrainConfig, compare, sample_pair, train
from scriptsev.synthetic import make_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-docs", type=int, default=600)
    parser.add_argument("--corpus-seed", type=int, default=1234)
    parser.add_argument("--seeds", type=int, nargs="+", default=[7, 8, 9, 10, 11])
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--hidden-dim", type=int, default=32)
    parser.add_argument("--pairs-per-epoch", type=int, default=600)
    parser.add_argument("--patience", type=int, default=15)
    parser.add_argument("--rank-pairs", type=int, default=500)
    args = parser.parse_args()

    dataset = make_corpus(n_docs=args.n_docs, seed=args.corpus_seed)
    dataset = stratified_split(dataset, seed=args.corpus_seed)
    provider = HashEmbedder(dim=args.embed_dim)
    backbone = BackboneConfig(
        architecture="rnn_trans", input_dim=args.embed_dim, hidden_dim=args.hidden_dim
    )
    test = dataset.part("test")
    docs = [inst.document for inst in test]
    gold = [int(inst.label) for inst in test]

    smt_preds, cls_preds = [], []
    for seed in args.seeds:
        t0 = time.time()
        smt = train(
            TrainConfig(seed=seed, pairs_per_epoch=args.pairs_per_epoch,
                        patience=args.patience, max_epochs=40),
            dataset, backbone, True, provider,
        )
        t_smt = time.time() - t0
        t0 = time.time()
        cls = train(
            TrainConfig(seed=seed, patience=args.patience, max_epochs=90),
            dataset, backbone, False, provider,
        )
        t_cls = time.time() - t0

        p_smt, _ = smt.predict_batch(docs)
        p_cls, _ = cls.predict_batch(docs)
        smt_preds.append([int(p) for p in p_smt])
        cls_preds.append([int(p) for p in p_cls])

        rng = np.random.default_rng(99)
        correct = sum(
            compare(smt, pair.left.document, pair.right.document)[0] is pair.rank
            for pair in (sample_pair(test, rng) for _ in range(args.rank_pairs))
        )
        print(
            f"seed {seed}: multitask F1 {macro_f1(gold, p_smt):.4f} "
            f"(rank acc {correct / args.rank_pairs:.3f}, {t_smt:.0f}s) | "
            f"classification-only F1 {macro_f1(gold, p_cls):.4f} ({t_cls:.0f}s)",
            flush=True,
        )

    smt_mean = float(np.mean([macro_f1(gold, p) for p in smt_preds]))
    cls_mean = float(np.mean([macro_f1(gold, p) for p in cls_preds]))
    p_harm = significance_test(
        gold * len(args.seeds),
        [x for row in cls_preds for x in row],
        [x for row in smt_preds for x in row],
        iterations=5000,
        seed=17,
        alternative="greater",
    )
    print(f"\nmean test macro F1: multitask {smt_mean:.4f}, "
          f"classification-only {cls_mean:.4f}")
    print(f"harm-direction p-value: {p_harm:.4f} "
          f"({'no significant harm' if p_harm > 0.05 else 'HARM DETECTED'})")


if __name__ == "__main__":
    main()
