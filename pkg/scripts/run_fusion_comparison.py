"""Train acoustic-only, text-only and fused models on synthetic corpora and print per-class AUCs."""

import argparse
import json
import logging
import tempfile
from pathlib import Path

import numpy as np
import torch

from turnfusion.experiments import TOY_LEARNING_RATE, fusion_comparison, synthetic_data
from turnfusion.metrics import CLASS_NAMES


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--acoustic-cue", type=float, default=0.8)
    p.add_argument("--lexical-cue", type=float, default=0.8)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=TOY_LEARNING_RATE)
    p.add_argument("--workdir", type=Path, help="keep generated corpora here (default: temporary)")
    p.add_argument("--json", type=Path, help="write all reports to this file")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)

    rows, dump = [], {}
    with tempfile.TemporaryDirectory() as tmp:
        base = args.workdir or Path(tmp)
        for seed in args.seeds:
            data = synthetic_data(base / f"synth{seed}", seed, acoustic_cue=args.acoustic_cue,
                                  lexical_cue=args.lexical_cue)
            for mode, rep in fusion_comparison(data, seed, epochs=args.epochs, learning_rate=args.lr).items():
                aucs = [rep.per_class[c].auc if rep.per_class[c] else float("nan") for c in CLASS_NAMES]
                rows.append((seed, mode.value, *aucs, rep.average_auc))
                dump[f"{seed}/{mode.value}"] = rep.to_json()

    header = ("seed", "mode", "auc_cs", "auc_bc", "auc_tt", "avg_auc")
    print("  ".join(f"{h:>13}" for h in header))
    for r in rows:
        print("  ".join(f"{x:>13}" if isinstance(x, (int, str)) else f"{x:13.4f}" for x in r))
    for mode in sorted({r[1] for r in rows}):
        vals = np.array([r[2:] for r in rows if r[1] == mode])
        print("  ".join([f"{'mean':>13}", f"{mode:>13}", *(f"{x:13.4f}" for x in vals.mean(0))]))
    if args.json:
        args.json.write_text(json.dumps(dump, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
