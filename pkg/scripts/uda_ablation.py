"""Train baseline, ablations, full method and oracle on one scenario and tabulate target mIoU.

Example:
    python scripts/uda_ablation.py --config synthetic-64-32 --out-dir runs/ablation
"""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from lionxa import config as C
from lionxa.cli import load_config
from lionxa.metrics import stats_table
from lionxa.trainer import Trainer, load_data


def variants(cfg, with_oracle):
    out = [("baseline", C.baseline_variant(cfg))]
    out += [(n, v) for n, v in C.ablation_variants(cfg) if n != "full"]
    out.append(("full", cfg))
    if with_oracle:
        out.append(("oracle", C.oracle_variant(cfg)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="synthetic-64-32")
    ap.add_argument("--out-dir", default="runs/ablation")
    ap.add_argument("--max-iter", type=int, default=None)
    ap.add_argument("--only", nargs="*", help="subset of variant names")
    ap.add_argument("--oracle", action="store_true", help="also train on labelled target scans")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.max_iter:
        cfg = replace(cfg, train=replace(cfg.train, max_iter=args.max_iter,
                                         val_every=min(cfg.train.val_every, args.max_iter)))
    data = load_data(cfg)
    out = Path(args.out_dir)
    results = {}
    for name, v in variants(cfg, args.oracle):
        if args.only and name not in args.only:
            continue
        t0 = time.perf_counter()
        res = Trainer(v, out / name, data).run()
        results[name] = res.test_miou
        print(f"{name:18s} " + "  ".join(f"{m} {x:6.2f}" for m, x in res.test_miou.items())
              + f"  ({time.perf_counter() - t0:.0f} s)", flush=True)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"scenario": cfg.name, "miou": results}
    if {"baseline", "full", "oracle"} <= set(results):
        rows = {m: (results["baseline"][m], results["full"][m], results["oracle"][m]) for m in results["full"]}
        summary["domain_stats"] = stats_table(rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"summary written to {out / 'summary.json'}")


if __name__ == "__main__":
    main()
