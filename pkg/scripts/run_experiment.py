"""Synthesize a corpus, train all four rankers, and print a results table.

    python3 scripts/run_experiment.py --videos 200 --sigma 0.3 --out results.csv
"""

import argparse
import csv
import logging
import math
import time
from dataclasses import replace

from icebreaker.config import RunConfig, seeded
from icebreaker.dataset import Dataset, SynthConfig, generate_synthetic
from icebreaker.evaluation import HIT_KS, RECALL_KS, evaluate, random_ranker_recall
from icebreaker.models import rank, train

MODELS = ["rf", "reg_cosine", "reg_poisson", "deeplda"]


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--videos", type=int, default=200)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--relevant", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--video-dim", type=int, default=512)
    p.add_argument("--frame-dim", type=int, default=2048)
    p.add_argument("--max-frames", type=int, default=30)
    p.add_argument("--epochs", type=int, default=50, help="regression epochs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--models", default=",".join(MODELS))
    p.add_argument("--out", help="optional CSV of the table")
    return p.parse_args(argv)


def main(argv=None) -> int:
    a = parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    synth = SynthConfig(n_videos=a.videos, n_clusters=a.clusters, relevant_per_query=a.relevant,
                        cluster_noise_sigma=a.sigma, video_dim=a.video_dim, frame_dim=a.frame_dim,
                        max_frames=a.max_frames, seed=a.seed)
    data = Dataset(*generate_synthetic(synth))
    queries = sorted(data.split.get(a.split))
    rel = data.relevance.restrict(queries)
    rows = []
    for name in a.models.split(","):
        cfg = seeded(RunConfig(model=name, seed=a.seed))
        cfg.reg = replace(cfg.reg, max_frames=a.max_frames, epochs=a.epochs)
        t0 = time.perf_counter()
        model = train(cfg, data)
        report = evaluate(rank(model, data, queries, max(RECALL_KS)), rel)
        rows.append([name] + [report.hit_at[k] for k in HIT_KS] + [report.recall_at[k] for k in RECALL_KS]
                    + [time.perf_counter() - t0])
    n = a.videos - 1
    # chance of at least one of the relevant videos in a uniformly random top k
    hit = [1 - math.comb(n - a.relevant, min(k, n)) / math.comb(n, min(k, n)) for k in HIT_KS]
    rows.append(["random"] + hit + [random_ranker_recall(n, k) for k in RECALL_KS]
                + [0.0])

    header = ["method"] + [f"hit@{k}" for k in HIT_KS] + [f"recall@{k}" for k in RECALL_KS] + ["seconds"]
    print(f"{a.split} split, {len(queries)} queries, sigma={a.sigma}, seed={a.seed}")
    print("  ".join(f"{h:>11}" for h in header))
    for r in rows:
        print(f"{r[0]:>11}  " + "  ".join(f"{v:11.3f}" for v in r[1:]))
    if a.out:
        with open(a.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows([[r[0]] + [f"{v:.6f}" for v in r[1:]] for r in rows])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
