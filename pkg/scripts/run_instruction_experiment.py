"""Compare the three-way head against instruction-conditioned binary heads, with and without history."""

import argparse
import logging
import tempfile
from pathlib import Path

import torch

from turnfusion.experiments import TOY_LEARNING_RATE, evaluate_mode, synthetic_data
from turnfusion.metrics import CLASS_NAMES
from turnfusion.model import FusionOption, HeadKind

VARIANTS = [
    (HeadKind.THREE_WAY, False),
    (HeadKind.THREE_WAY, True),
    (HeadKind.MULTITASK_BINARY, False),
    (HeadKind.MULTITASK_BINARY, True),
]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--fusion", default="fusion_opt1", choices=[f.value for f in FusionOption])
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=TOY_LEARNING_RATE)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)
    fusion = FusionOption(args.fusion)

    print(f"{'seed':>4}  {'head':>16}  {'history':>7}  " + "  ".join(f"{c[:13]:>13}" for c in CLASS_NAMES)
          + f"  {'avg_auc':>8}  {'bacc':>6}")
    with tempfile.TemporaryDirectory() as tmp:
        for seed in args.seeds:
            data = synthetic_data(Path(tmp) / f"synth{seed}", seed)
            for head, history in VARIANTS:
                rep = evaluate_mode(data, fusion, seed, head=head, use_history=history, epochs=args.epochs,
                                    learning_rate=args.lr)
                aucs = "  ".join(f"{rep.per_class[c].auc:13.4f}" if rep.per_class[c] else f"{'-':>13}"
                                 for c in CLASS_NAMES)
                bacc = f"{rep.bacc:6.4f}" if rep.bacc is not None else "     -"
                print(f"{seed:>4}  {head.value:>16}  {str(history):>7}  {aucs}  {rep.average_auc:8.4f}  {bacc}")


if __name__ == "__main__":
    main()
