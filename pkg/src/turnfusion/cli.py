"""Command-line entry point: synth, prepare, train, score, evaluate, report.

Every command stages its outputs next to the destination and moves them into
place only on success, then writes a run manifest beside each artifact.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, Config, load_config
from .corpus import BackchannelLexicon, prepare_corpus, read_corpus, read_samples, write_samples
from .instructions import augment, write_augmented
from .metrics import CLASS_NAMES, export_histograms, export_roc, report as metrics_report

log = logging.getLogger("turnfusion")

MANIFEST_NAME = "run_manifest.json"


# --------------------------------------------------------------------------
# atomic outputs

class Staging:
    """Collect outputs in temporary siblings; `commit` moves them all into place."""

    def __init__(self):
        self._pending: list[tuple[Path, Path]] = []

    def dir(self, dest: Path) -> Path:
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{dest.name}.", dir=dest.parent))
        self._pending.append((tmp, dest))
        return tmp

    def file(self, dest: Path) -> Path:
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, name = tempfile.mkstemp(prefix=f".{dest.name}.", dir=dest.parent)
        os.close(fd)
        self._pending.append((Path(name), dest))
        return Path(name)

    def commit(self) -> None:
        umask = os.umask(0)
        os.umask(umask)
        for tmp, dest in self._pending:
            os.chmod(tmp, (0o777 if tmp.is_dir() else 0o666) & ~umask)
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            os.replace(tmp, dest)
        self._pending.clear()

    def discard(self) -> None:
        for tmp, _ in self._pending:
            if tmp.is_dir():
                shutil.rmtree(tmp, ignore_errors=True)
            else:
                tmp.unlink(missing_ok=True)
        self._pending.clear()


@contextlib.contextmanager
def staged():
    stage = Staging()
    try:
        yield stage
    except BaseException:
        stage.discard()
        raise
    stage.commit()


def run_manifest(command: str, config: dict, inputs: dict, outputs: dict, seed: int | None, started: float) -> dict:
    return {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "duration_s": round(time.time() - started, 3),
    }


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(args, **overrides) -> Config:
    return load_config(getattr(args, "config", None), overrides)


def _sessions_dir(corpus: Path) -> Path:
    return corpus / "sessions" if (corpus / "sessions").is_dir() else corpus


def _feature_store(corpus: Path | None):
    from .features import FeatureStore

    if corpus is None:
        return None
    return FeatureStore(corpus / "features")


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> None:
    from .synth import SynthConfig, write_corpus

    values = json.loads(Path(args.synth_config).read_text()) if args.synth_config else {}
    known = {f.name for f in dataclasses.fields(SynthConfig)}
    for key in values:
        if key not in known:
            raise ConfigError(key, "unknown synth key")
    flags = {"seed": args.seed, "n_sessions": args.sessions, "sentences_per_session": args.sentences,
             "acoustic_cue": args.acoustic_cue, "lexical_cue": args.lexical_cue}
    values.update({k: v for k, v in flags.items() if v is not None})
    config = SynthConfig(**values)
    started = time.time()
    with staged() as stage:
        tmp = stage.dir(args.out)
        write_corpus(config, tmp)
        write_json(tmp / MANIFEST_NAME, run_manifest("synth", dataclasses.asdict(config), {},
                                                     {"corpus": args.out}, config.seed, started))


def cmd_prepare(args) -> None:
    config = _config(args, seed=args.seed, history_len=args.history_len)
    started = time.time()
    sessions = read_corpus(_sessions_dir(args.corpus))
    lexicon_path = args.lexicon
    if lexicon_path is None and (args.corpus / "lexicon.txt").is_file():
        lexicon_path = args.corpus / "lexicon.txt"
    lexicon = BackchannelLexicon.load(lexicon_path) if lexicon_path else None
    if lexicon_path:
        log.info("using backchannel lexicon %s", lexicon_path)
    prepared = prepare_corpus(sessions, lexicon=lexicon, lexicon_size=config.lexicon_size,
                              ratio=config.split_ratio, history_len=config.history_len,
                              seed=config.seed, on_error=config.on_error)
    with staged() as stage:
        tmp = stage.dir(args.out)
        for name, samples in prepared.samples.items():
            write_samples(samples, tmp / f"{name}.jsonl")
            if args.instructions and samples:
                write_augmented(augment(samples, use_history=config.use_history,
                                        max_history=config.history_len), tmp / f"{name}.instructions.jsonl")
        write_json(tmp / "splits.json", prepared.splits)
        write_json(tmp / "stats.json", prepared.stats)
        prepared.lexicon.save(tmp / "lexicon.txt")
        write_json(tmp / MANIFEST_NAME, run_manifest(
            "prepare", config.to_dict(), {"corpus": args.corpus, "lexicon": lexicon_path},
            {"data": args.out}, config.seed, started))


def _threads(n: int) -> None:
    import torch

    torch.set_num_threads(n)


def cmd_train(args) -> None:
    from .checkpoint import Checkpoint
    from .train import train

    config = _config(args, seed=args.seed, fusion=args.fusion, head=args.head, use_history=args.history,
                     epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                     low_rank=args.low_rank)
    _threads(args.threads)
    started = time.time()
    train_samples = read_samples(args.data / "train.jsonl")
    if not train_samples:
        raise ValueError(f"{args.data / 'train.jsonl'} holds no samples")
    val_path = args.data / "validation.jsonl"
    val_samples = read_samples(val_path) if val_path.exists() else []
    tc = config.train_config()
    store = None
    if tc.fusion.uses_acoustic:
        if args.corpus is None:
            raise ValueError(f"--corpus is required for {tc.fusion.value} (acoustic features)")
        store = _feature_store(args.corpus)
        first = train_samples[0]
        frame_dim = store.sentence(first.session_id, first.speaker, first.sentence_id)[0].shape[1]
        tc = config.train_config(frame_dim=frame_dim)
    init_text = Checkpoint.load(args.init_text) if args.init_text else None
    init_acoustic = Checkpoint.load(args.init_acoustic) if args.init_acoustic else None
    result = train(tc, train_samples, val_samples, store, init_text=init_text, init_acoustic=init_acoustic)
    with staged() as stage:
        tmp = stage.dir(args.out)
        result.checkpoint.save(tmp)
        with (tmp / "train_log.jsonl").open("w") as f:
            for row in result.history:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        write_json(tmp / MANIFEST_NAME, run_manifest(
            "train", config.to_dict(),
            {"data": args.data, "corpus": args.corpus, "init_text": args.init_text,
             "init_acoustic": args.init_acoustic},
            {"checkpoint": args.out}, config.seed, started))


def model_descriptor(ckpt) -> dict:
    tc = ckpt.metadata.get("train_config", {})
    return {"fusion": ckpt.fusion.value, "head": ckpt.head.value,
            "use_history": bool(tc.get("use_history", False)), "low_rank": ckpt.low_rank}


def cmd_score(args) -> None:
    from .checkpoint import Checkpoint
    from .train import score_samples, write_scores

    _threads(args.threads)
    started = time.time()
    ckpt = Checkpoint.load(args.checkpoint)
    samples = read_samples(args.samples)
    store = _feature_store(args.corpus) if ckpt.fusion.uses_acoustic else None
    if ckpt.fusion.uses_acoustic and store is None:
        raise ValueError(f"--corpus is required to score a {ckpt.fusion.value} checkpoint")
    records = score_samples(ckpt, samples, store)
    with staged() as stage:
        write_scores(records, stage.file(args.out))
        write_json(stage.file(Path(f"{args.out}.manifest.json")), run_manifest(
            "score", {"model": model_descriptor(ckpt)},
            {"checkpoint": args.checkpoint, "samples": args.samples, "corpus": args.corpus},
            {"scores": args.out}, ckpt.metadata.get("seed"), started))


def cmd_evaluate(args) -> None:
    from .train import read_scores

    started = time.time()
    records = read_scores(args.scores)
    rep = metrics_report(records)
    sidecar = Path(f"{args.scores}.manifest.json")
    if sidecar.exists():
        rep.model = json.loads(sidecar.read_text()).get("config", {}).get("model")
    outputs = {"metrics": args.out}
    with staged() as stage:
        write_json(stage.file(args.out), rep.to_json())
        if args.exports:
            tmp = stage.dir(args.exports)
            export_roc(records, tmp / "roc.csv")
            export_histograms(records, tmp / "histograms.csv", bins=args.bins)
            outputs["exports"] = args.exports
        write_json(stage.file(Path(f"{args.out}.manifest.json")), run_manifest(
            "evaluate", {"bins": args.bins}, {"scores": args.scores}, outputs, None, started))


REPORT_COLUMNS = ["name", "fusion", "head", "history", "avg_auc", "avg_eer",
                  *(f"auc_{c}" for c in CLASS_NAMES), *(f"eer_{c}" for c in CLASS_NAMES), "bacc"]


def _fmt(x) -> str:
    return "" if x is None else (f"{x:.4f}" if isinstance(x, float) else str(x))


def cmd_report(args) -> None:
    started = time.time()
    rows = []
    for path in args.metrics:
        m = json.loads(Path(path).read_text())
        model = m.get("model") or {}
        row = {"name": Path(path).stem, "fusion": model.get("fusion", "?"), "head": model.get("head", "?"),
               "history": model.get("use_history", "?"),
               "avg_auc": m["average"]["auc"], "avg_eer": m["average"]["eer"], "bacc": m.get("bacc")}
        for c in CLASS_NAMES:
            row[f"auc_{c}"] = m[c]["auc"] if m.get(c) else None
            row[f"eer_{c}"] = m[c]["eer"] if m.get(c) else None
        rows.append(row)
    rows.sort(key=lambda r: (str(r["head"]), str(r["history"]), str(r["fusion"]), r["name"]))
    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in REPORT_COLUMNS}
    lines = ["  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS)]
    lines += ["  ".join(_fmt(r[c]).ljust(widths[c]) for c in REPORT_COLUMNS) for r in rows]
    csv_path = args.out.with_suffix(".csv")
    with staged() as stage:
        stage.file(args.out).write_text("\n".join(line.rstrip() for line in lines) + "\n")
        with stage.file(csv_path).open("w", newline="") as f:
            w = csv.DictWriter(f, REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows({c: _fmt(r[c]) for c in REPORT_COLUMNS} for r in rows)
        write_json(stage.file(Path(f"{args.out}.manifest.json")), run_manifest(
            "report", {}, {f"metrics{i}": p for i, p in enumerate(args.metrics)},
            {"table": args.out, "csv": csv_path}, None, started))
    print("\n".join(lines))


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="turnfusion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--synth-config", type=Path, help="JSON object of SynthConfig fields")
    s.add_argument("--sessions", type=int)
    s.add_argument("--sentences", type=int)
    s.add_argument("--acoustic-cue", type=float)
    s.add_argument("--lexical-cue", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", help="corpus -> labeled samples, splits, downsampled training data")
    s.add_argument("--corpus", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--config", type=Path)
    s.add_argument("--lexicon", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--history-len", type=int)
    s.add_argument("--instructions", action="store_true", help="also dump instruction-augmented samples")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="samples -> checkpoint")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--corpus", type=Path, help="corpus directory holding features/")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--fusion", choices=["acoustic_only", "text_only", "fusion_opt1", "fusion_opt2"])
    s.add_argument("--head", choices=["three_way", "multitask_binary"])
    s.add_argument("--history", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--low-rank", type=int)
    s.add_argument("--init-text", type=Path, help="checkpoint whose text encoder initializes this model")
    s.add_argument("--init-acoustic", type=Path, help="checkpoint whose acoustic branch initializes this model")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="checkpoint + samples -> score CSV")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--samples", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--corpus", type=Path)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="score CSV -> metrics JSON")
    s.add_argument("--scores", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--exports", type=Path, help="directory for ROC and histogram CSVs")
    s.add_argument("--bins", type=int, default=20)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="metrics JSONs -> comparison table")
    s.add_argument("--metrics", type=Path, nargs="+", required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"turnfusion {args.command}: invalid config: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FloatingPointError) as e:
        print(f"turnfusion {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
