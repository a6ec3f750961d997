#!/usr/bin/env python3
"""Hyperparameter sweeps as repeated `attrprompt base-to-novel` runs.

Each grid point gets its own config file and output directory under --out;
a summary.csv with base/novel/hm per point is written at the end.

    tools/ablation.py --bin build/tools/attrprompt --data synth_dir \
        --out sweeps/layer --param avae_layer --values 1 2 3 4 5 6
"""

import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path

SWEEPABLE = {
    "n_visual_prompts": int,
    "n_textual_prompts": int,
    "lambda": int,
    "beta": float,
    "avae_layer": int,
    "gamma": float,
    "use_avae": lambda s: s.lower() in ("1", "true", "yes"),
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bin", required=True, type=Path, help="attrprompt executable")
    ap.add_argument("--data", required=True, type=Path, help="dataset directory")
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    ap.add_argument("--values", required=True, nargs="+")
    ap.add_argument("--base-config", type=Path, help="config overlay shared by every run")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()

    base = json.loads(args.base_config.read_text()) if args.base_config else {}
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for raw in args.values:
        value = SWEEPABLE[args.param](raw)
        for seed in args.seeds:
            run_dir = args.out / f"{args.param}={raw}" / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            cfg = dict(base, **{args.param: value, "seed": seed})
            cfg_path = run_dir / "config.in.json"
            cfg_path.write_text(json.dumps(cfg, indent=2))
            cmd = [str(args.bin), "base-to-novel", "--config", str(cfg_path),
                   "--data", str(args.data), "--out", str(run_dir)]
            if args.epochs is not None:
                cmd += ["--epochs", str(args.epochs)]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                print(f"{args.param}={raw} seed={seed}: exit {proc.returncode}: "
                      f"{proc.stderr.strip()}", file=sys.stderr)
                rows.append({"value": raw, "seed": seed, "status": proc.returncode})
                continue
            res = json.loads(proc.stdout)
            rows.append({"value": raw, "seed": seed, "status": 0,
                         **{k: res[k] for k in ("base_acc", "novel_acc", "hm")}})
            print(f"{args.param}={raw} seed={seed}: base {res['base_acc']:.2f} "
                  f"novel {res['novel_acc']:.2f} hm {res['hm']:.2f}")

    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["value", "seed", "status", "base_acc", "novel_acc", "hm"])
        w.writeheader()
        w.writerows(rows)
    return 0 if all(r["status"] == 0 for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
