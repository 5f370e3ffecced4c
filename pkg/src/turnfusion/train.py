"""Training with per-mode freezing policies, checkpoint selection, and scoring."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .corpus import Sample
from .features import FeatureStore
from .instructions import N_TASKS, compose_text
from .metrics import ScoreRecord
from .model import (Batch, EncoderConfig, FusionOption, HeadKind, TurnModel, bce,
                    multitask_loss, three_way_loss)
from .vocab import Vocab

log = logging.getLogger(__name__)

REFERENCE_LEARNING_RATE = 5e-5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = REFERENCE_LEARNING_RATE
    epochs: int = 5
    batch_size: int = 4
    fusion: FusionOption = FusionOption.TEXT_ONLY
    head: HeadKind = HeadKind.THREE_WAY
    use_history: bool = False
    history_len: int = 2
    low_rank: int = 0  # 0 disables adapters
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eval_batch_size: int = 256
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        object.__setattr__(self, "fusion", FusionOption(self.fusion))
        object.__setattr__(self, "head", HeadKind(self.head))
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        for name in ("epochs", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.low_rank < 0 or self.history_len < 0:
            raise ValueError("low_rank and history_len must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"] = self.fusion.value
        d["head"] = self.head.value
        d["betas"] = list(self.betas)
        return d


# --------------------------------------------------------------------------
# freezing

def freeze_policy(model: TurnModel) -> set[str]:
    """Set requires_grad per the model's fusion option; returns trainable names.

    acoustic_only: acoustic projection + head
    text_only:     text encoder (adapters only when low-rank) + head
    fusion_opt1:   acoustic projection + text encoder (or adapters) + head
    fusion_opt2:   head only
    The acoustic backbone and adapted base matrices are always frozen.
    """
    fusion = model.fusion
    for p in model.parameters():
        p.requires_grad_(False)
    model.head.requires_grad_(True)
    if fusion is not FusionOption.FUSION_OPT2:
        if model.acoustic is not None:
            model.acoustic.projection.requires_grad_(True)
        if model.text is not None:
            for name, p in model.text.named_parameters():
                p.requires_grad_(not model.low_rank or "lora_" in name)
    return {n for n, p in model.named_parameters() if p.requires_grad}


def load_branch(model: TurnModel, source: Checkpoint, prefix: str) -> None:
    """Copy every `prefix.*` parameter from a checkpoint into the model."""
    state = model.state_dict()
    names = [n for n in state if n.startswith(prefix + ".")]
    if not names:
        raise ValueError(f"model has no {prefix} branch")
    for n in names:
        if n not in source.params:
            raise ValueError(f"checkpoint has no parameter {n}")
        if tuple(source.params[n].shape) != tuple(state[n].shape):
            raise ValueError(f"shape mismatch for {n}: {source.params[n].shape} vs {tuple(state[n].shape)}")
        state[n] = torch.from_numpy(source.params[n].copy()).to(state[n].dtype)
    model.load_state_dict(state)


# --------------------------------------------------------------------------
# data

@dataclass
class Encoded:
    sample_id: str
    label: int
    token_ids: tuple[list[int], ...]  # one sequence, or one per instruction
    frames: np.ndarray | None


def build_vocab(samples: Sequence[Sample], config: TrainConfig) -> Vocab:
    multitask = config.head is HeadKind.MULTITASK_BINARY
    # Instruction words are always in the vocabulary, so one composition suffices.
    return Vocab.build(compose_text(s, 0 if multitask else None, config.use_history, config.history_len)
                       for s in samples)


def encode_samples(samples: Sequence[Sample], config: TrainConfig, vocab: Vocab | None,
                   store: FeatureStore | None) -> list[Encoded]:
    if config.fusion.uses_acoustic and store is None:
        raise ValueError(f"{config.fusion.value} needs a feature store")
    tasks = range(N_TASKS) if config.head is HeadKind.MULTITASK_BINARY else (None,)
    out = []
    for s in samples:
        ids: tuple[list[int], ...] = ()
        if config.fusion.uses_text:
            ids = tuple(vocab.encode(compose_text(s, t, config.use_history, config.history_len),
                                     config.encoder.max_len) for t in tasks)
        frames = store.frames_for(s) if config.fusion.uses_acoustic else None
        out.append(Encoded(s.sample_id, int(s.label), ids, frames))
    return out


def collate(items: Sequence[Encoded], task: int = 0, dtype=torch.float32) -> Batch:
    batch = Batch()
    if items[0].token_ids:
        seqs = [it.token_ids[task] for it in items]
        lengths = torch.tensor([len(q) for q in seqs])
        ids = torch.zeros(len(seqs), int(lengths.max()), dtype=torch.long)
        for i, q in enumerate(seqs):
            ids[i, : len(q)] = torch.tensor(q)
        batch.token_ids, batch.lengths = ids, lengths
    if items[0].frames is not None:
        lengths = torch.tensor([it.frames.shape[0] for it in items])
        frames = np.zeros((len(items), int(lengths.max()), items[0].frames.shape[1]), dtype=np.float32)
        for i, it in enumerate(items):
            frames[i, : it.frames.shape[0]] = it.frames
        batch.frames, batch.frame_lengths = torch.from_numpy(frames).to(dtype), lengths
    return batch


def _dtype(model: TurnModel):
    return next(model.parameters()).dtype


def batch_loss(model: TurnModel, items: Sequence[Encoded], reduction: str = "mean") -> torch.Tensor:
    """Three-way cross-entropy, or the sum over instructions of per-task BCE."""
    labels = torch.tensor([it.label for it in items])
    dtype = _dtype(model)
    if model.head_kind is HeadKind.THREE_WAY:
        logits = model(collate(items, 0, dtype))
        if reduction == "sum":
            return torch.nn.functional.cross_entropy(logits, labels, reduction="sum")
        return three_way_loss(logits, labels)
    probs, targets = {}, {}
    for s in range(N_TASKS):
        probs[s] = torch.sigmoid(model(collate(items, s if items[0].token_ids else 0, dtype), task=s))
        targets[s] = (labels == s).to(dtype)
    if reduction == "sum":
        return sum(bce(probs[s], targets[s]).sum() for s in range(N_TASKS))
    return multitask_loss(probs, targets)


@torch.no_grad()
def dataset_loss(model: TurnModel, items: Sequence[Encoded], batch_size: int = 256) -> float:
    """Per-sample mean loss over a whole dataset."""
    if not items:
        return float("nan")
    model.eval()
    total = sum(float(batch_loss(model, items[i : i + batch_size], "sum"))
                for i in range(0, len(items), batch_size))
    return total / len(items)


# --------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int


def train(
    config: TrainConfig,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    store: FeatureStore | None = None,
    *,
    init_text: Checkpoint | None = None,
    init_acoustic: Checkpoint | None = None,
    dtype=torch.float32,
) -> TrainResult:
    """Minibatch Adam; returns the epoch with the lowest validation loss.

    Without validation samples the last epoch is returned.
    """
    if not train_samples:
        raise ValueError("empty training set")

    vocab = None
    enc = config.encoder
    low_rank = config.low_rank
    if config.fusion.uses_text:
        if init_text is not None:
            vocab = init_text.get_vocab()
            src = init_text.encoder
            enc = replace(enc, text_dim=src.text_dim, text_layers=src.text_layers,
                          text_heads=src.text_heads, max_len=src.max_len)
            low_rank = init_text.low_rank
        else:
            vocab = build_vocab(train_samples, config)
        enc = replace(enc, vocab_size=len(vocab))
    if init_acoustic is not None and config.fusion.uses_acoustic:
        enc = replace(enc, frame_dim=init_acoustic.encoder.frame_dim, proj_dim=init_acoustic.encoder.proj_dim)
    config = replace(config, encoder=enc, low_rank=low_rank)

    torch.manual_seed(config.seed)
    model = TurnModel(enc, config.fusion, config.head, low_rank).to(dtype)
    if init_text is not None and model.text is not None:
        load_branch(model, init_text, "text")
    if init_acoustic is not None and model.acoustic is not None:
        load_branch(model, init_acoustic, "acoustic")
    if config.fusion is FusionOption.FUSION_OPT2 and (init_text is None or init_acoustic is None):
        log.warning("fusion_opt2 without pretrained branches trains a head over frozen random encoders")
    trainable = freeze_policy(model)

    train_items = encode_samples(train_samples, config, vocab, store)
    val_items = encode_samples(val_samples, config, vocab, store)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=config.betas, weight_decay=0.0)
    rng = np.random.default_rng(config.seed)

    history = []
    best_state, best_val, best_epoch = None, float("inf"), 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(train_items))
        losses = []
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            items = [train_items[i] for i in order[start : start + config.batch_size]]
            loss = batch_loss(model, items)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val = dataset_loss(model, val_items, config.eval_batch_size)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val})
        log.info("epoch %d train %.4f val %.4f", epoch, history[-1]["train_loss"], val)
        if not val_items or val < best_val:
            best_val, best_epoch = val, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    ckpt = Checkpoint.from_model(
        model, vocab, seed=config.seed, epoch=best_epoch, train_config=config.to_dict(),
        trainable_groups=sorted(trainable), history=history,
    )
    return TrainResult(ckpt, history, best_epoch)


# --------------------------------------------------------------------------
# scoring

@torch.no_grad()
def score_samples(checkpoint: Checkpoint, samples: Sequence[Sample], store: FeatureStore | None = None,
                  batch_size: int = 256) -> list[ScoreRecord]:
    """Class scores for every sample: softmax posteriors or per-task logistic scores."""
    tc = checkpoint.metadata.get("train_config", {})
    config = TrainConfig(
        fusion=checkpoint.fusion, head=checkpoint.head, use_history=tc.get("use_history", False),
        history_len=tc.get("history_len", 2), encoder=checkpoint.encoder,
    )
    model = checkpoint.build_model()
    model.eval()
    items = encode_samples(samples, config, checkpoint.get_vocab(), store)
    dtype = _dtype(model)
    records = []
    for i in range(0, len(items), batch_size):
        chunk = items[i : i + batch_size]
        if model.head_kind is HeadKind.THREE_WAY:
            scores = model(collate(chunk, 0, dtype)).softmax(-1)
        else:
            text = bool(chunk[0].token_ids)
            scores = torch.stack([torch.sigmoid(model(collate(chunk, s if text else 0, dtype), task=s))
                                  for s in range(N_TASKS)], -1)
        for it, row in zip(chunk, scores.double().numpy()):
            records.append(ScoreRecord(it.sample_id, it.label, tuple(float(x) for x in row)))
    return records


SCORE_HEADER = ["sample_id", "true_label", "score_continue", "score_backchannel", "score_turn"]


def write_scores(records: Sequence[ScoreRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in records:
            w.writerow([r.sample_id, int(r.true_label), *(repr(float(x)) for x in r.scores)])


def read_scores(path: str | Path) -> list[ScoreRecord]:
    with Path(path).open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SCORE_HEADER)}")
        return [ScoreRecord(row[0], int(row[1]), tuple(float(x) for x in row[2:5])) for row in reader]
