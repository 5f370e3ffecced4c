"""Acoustic and text encoders, late fusion, classification heads and losses."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Mapping

import torch
import torch.nn.functional as F
from torch import Tensor, nn

BCE_EPS = 1e-7


class FusionOption(str, enum.Enum):
    ACOUSTIC_ONLY = "acoustic_only"
    TEXT_ONLY = "text_only"
    FUSION_OPT1 = "fusion_opt1"
    FUSION_OPT2 = "fusion_opt2"

    @property
    def uses_acoustic(self) -> bool:
        return self is not FusionOption.TEXT_ONLY

    @property
    def uses_text(self) -> bool:
        return self is not FusionOption.ACOUSTIC_ONLY


class HeadKind(str, enum.Enum):
    THREE_WAY = "three_way"
    MULTITASK_BINARY = "multitask_binary"


@dataclass(frozen=True)
class EncoderConfig:
    frame_dim: int = 16
    proj_dim: int = 256
    text_dim: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_len: int = 128
    vocab_size: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "vocab_size" and value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.text_dim % self.text_heads:
            raise ValueError("text_dim must be divisible by text_heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Padded model inputs. Token sequences are right-padded."""

    token_ids: Tensor | None = None  # B x L, long
    lengths: Tensor | None = None  # B
    frames: Tensor | None = None  # B x T x frame_dim
    frame_lengths: Tensor | None = None  # B

    def __len__(self) -> int:
        ref = self.lengths if self.lengths is not None else self.frame_lengths
        return int(ref.shape[0])


# --------------------------------------------------------------------------
# acoustic branch

class AcousticEncoder(nn.Module):
    """Frozen frame-wise backbone, mean pooling over time, trainable projection.

    The backbone stands in for a pretrained speech encoder: identity-initialised
    and never trained. Loading real pretrained weights is not supported.
    """

    def __init__(self, frame_dim: int, proj_dim: int):
        super().__init__()
        self.backbone = nn.Linear(frame_dim, frame_dim)
        with torch.no_grad():
            self.backbone.weight.copy_(torch.eye(frame_dim))
            self.backbone.bias.zero_()
        self.backbone.requires_grad_(False)
        self.projection = nn.Linear(frame_dim, proj_dim)

    def forward(self, frames: Tensor, lengths: Tensor) -> Tensor:
        if (lengths < 1).any():
            raise ValueError("empty acoustic segment")
        hidden = self.backbone(frames)
        mask = (torch.arange(frames.shape[1]) < lengths[:, None]).to(hidden.dtype)
        pooled = (hidden * mask[..., None]).sum(1) / lengths[:, None].to(hidden.dtype)
        return self.projection(pooled)


def encode_acoustic(encoder: AcousticEncoder, frames: Tensor) -> Tensor:
    """Projection of the time-averaged frame embeddings for one T x d_f segment."""
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError(f"expected a non-empty T x d_f matrix, got shape {tuple(frames.shape)}")
    return encoder(frames[None], torch.tensor([frames.shape[0]]))[0]


# --------------------------------------------------------------------------
# text branch

class LoRALinear(nn.Module):
    """Frozen linear map plus a trainable low-rank delta B @ A (B starts at zero)."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float | None = None):
        super().__init__()
        d_out, d_in = base.weight.shape
        if rank < 1 or rank >= min(d_in, d_out):
            raise ValueError(f"rank {rank} is not low-rank for a {d_out}x{d_in} matrix")
        self.base = base
        self.base.requires_grad_(False)
        self.rank = rank
        self.scaling = (alpha if alpha is not None else rank) / rank
        self.lora_A = nn.Parameter(torch.empty(rank, d_in, dtype=base.weight.dtype))
        self.lora_B = nn.Parameter(torch.zeros(d_out, rank, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))

    def forward(self, x: Tensor) -> Tensor:
        return self.base(x) + (x @ self.lora_A.T @ self.lora_B.T) * self.scaling


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        h, dh = self.n_heads, D // self.n_heads

        def heads(t):
            return t.view(B, L, h, dh).transpose(1, 2)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        att = q @ k.transpose(-2, -1) / math.sqrt(dh)
        causal = torch.ones(L, L, dtype=torch.bool).tril()
        att = att.masked_fill(~causal, float("-inf")).softmax(-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, D)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class TextEncoder(nn.Module):
    """Small causal transformer read out at the last real token."""

    def __init__(self, vocab_size: int, dim: int, n_layers: int, n_heads: int, max_len: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.tok_emb = nn.Embedding(vocab_size, dim)
        self.pos_emb = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList(Block(dim, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(dim)
        self.low_rank = 0

    def hidden_states(self, token_ids: Tensor) -> Tensor:
        if token_ids.shape[1] > self.max_len:
            raise ValueError(f"sequence length {token_ids.shape[1]} exceeds max_len {self.max_len}")
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.vocab_size):
            raise ValueError("token id outside the vocabulary")
        pos = torch.arange(token_ids.shape[1])
        x = self.tok_emb(token_ids) + self.pos_emb(pos)[None]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def forward(self, token_ids: Tensor, lengths: Tensor) -> Tensor:
        if (lengths < 1).any():
            raise ValueError("empty token sequence")
        h = self.hidden_states(token_ids)
        return h[torch.arange(h.shape[0]), lengths - 1]


def encode_text(encoder: TextEncoder, token_ids) -> Tensor:
    """Final-layer embedding at the last position of one token sequence."""
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)
    if ids.numel() == 0:
        raise ValueError("empty token sequence")
    return encoder(ids[None], torch.tensor([ids.numel()]))[0]


def apply_low_rank_adapters(encoder: TextEncoder, rank: int, alpha: float | None = None) -> TextEncoder:
    """Wrap every attention projection in a LoRALinear and freeze the rest.

    Adapters start with B = 0, so outputs are unchanged until training moves B.
    """
    if encoder.low_rank:
        raise ValueError("encoder already carries low-rank adapters")
    for block in encoder.blocks:
        for name in ("q", "k", "v", "out"):
            setattr(block.attn, name, LoRALinear(getattr(block.attn, name), rank, alpha))
    for pname, p in encoder.named_parameters():
        p.requires_grad_("lora_" in pname)
    encoder.low_rank = rank
    return encoder


# --------------------------------------------------------------------------
# heads

class ThreeWayHead(nn.Module):
    def __init__(self, in_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, 3)

    def forward(self, x: Tensor) -> Tensor:
        return self.linear(x)


class MultiTaskHead(nn.Module):
    """One independent single-logit classifier per instruction."""

    def __init__(self, in_dim: int, n_tasks: int = 3):
        super().__init__()
        self.classifiers = nn.ModuleList(nn.Linear(in_dim, 1) for _ in range(n_tasks))

    def forward(self, x: Tensor, task: int) -> Tensor:
        if not 0 <= task < len(self.classifiers):
            raise ValueError(f"task index {task} outside 0..{len(self.classifiers) - 1}")
        return self.classifiers[task](x).squeeze(-1)


def classify(embedding: Tensor, head: ThreeWayHead) -> tuple[Tensor, Tensor]:
    if embedding.shape[-1] != head.linear.in_features:
        raise ValueError(f"embedding dim {embedding.shape[-1]} != head input dim {head.linear.in_features}")
    logits = head(embedding)
    return logits, logits.softmax(-1)


def fuse(e_a: Tensor | None, e_l: Tensor | None, head: ThreeWayHead) -> Tensor:
    if e_a is None or e_l is None:
        raise ValueError("fusion needs both the acoustic and the text embedding")
    return classify(torch.cat([e_a, e_l], -1), head)[0]


# --------------------------------------------------------------------------
# full model

class TurnModel(nn.Module):
    def __init__(self, config: EncoderConfig, fusion: FusionOption, head: HeadKind, low_rank: int = 0):
        super().__init__()
        self.config = config
        self.fusion = FusionOption(fusion)
        self.head_kind = HeadKind(head)
        in_dim = 0
        self.acoustic = None
        self.text = None
        if self.fusion.uses_acoustic:
            self.acoustic = AcousticEncoder(config.frame_dim, config.proj_dim)
            in_dim += config.proj_dim
        if self.fusion.uses_text:
            if config.vocab_size < 1:
                raise ValueError("text branch needs vocab_size >= 1")
            self.text = TextEncoder(config.vocab_size, config.text_dim, config.text_layers,
                                    config.text_heads, config.max_len)
            if low_rank:
                apply_low_rank_adapters(self.text, low_rank)
            in_dim += config.text_dim
        self.embed_dim = in_dim
        self.head = ThreeWayHead(in_dim) if self.head_kind is HeadKind.THREE_WAY else MultiTaskHead(in_dim)

    @property
    def low_rank(self) -> int:
        return self.text.low_rank if self.text is not None else 0

    def embed(self, batch: Batch) -> Tensor:
        parts = []
        if self.acoustic is not None:
            if batch.frames is None:
                raise ValueError(f"{self.fusion.value} model needs acoustic frames")
            parts.append(self.acoustic(batch.frames, batch.frame_lengths))
        if self.text is not None:
            if batch.token_ids is None:
                raise ValueError(f"{self.fusion.value} model needs token ids")
            parts.append(self.text(batch.token_ids, batch.lengths))
        return parts[0] if len(parts) == 1 else torch.cat(parts, -1)

    def forward(self, batch: Batch, task: int | None = None) -> Tensor:
        """Three-way logits (B x 3), or task logits (B) for a multi-task head."""
        emb = self.embed(batch)
        if self.head_kind is HeadKind.THREE_WAY:
            if task is not None:
                raise ValueError("three-way head takes no task index")
            return self.head(emb)
        if task is None:
            raise ValueError("multi-task head needs a task index")
        return self.head(emb, task)


def multitask_forward(model: TurnModel, batches: Mapping[int, Batch]) -> dict[int, Tensor]:
    """Route each instruction's batch through its own classifier; logistic scores."""
    if model.head_kind is not HeadKind.MULTITASK_BINARY:
        raise ValueError("multitask_forward needs a multi-task head")
    out = {}
    for s, batch in batches.items():
        if s not in (0, 1, 2):
            raise ValueError(f"instruction index {s} outside 0..2")
        out[s] = torch.sigmoid(model(batch, task=s))
    return out


# --------------------------------------------------------------------------
# losses

def bce(probs: Tensor, targets: Tensor) -> Tensor:
    """Per-sample binary cross-entropy on probabilities clamped to [eps, 1-eps]."""
    p = probs.clamp(BCE_EPS, 1 - BCE_EPS)
    t = targets.to(p.dtype)
    return -(t * p.log() + (1 - t) * (1 - p).log())


def three_way_loss(logits: Tensor, targets: Tensor) -> Tensor:
    return F.cross_entropy(logits, targets.long())


def multitask_loss(probs: Mapping[int, Tensor], targets: Mapping[int, Tensor]) -> Tensor:
    """Sum over tasks of the per-task mean BCE."""
    if set(probs) != set(targets):
        raise ValueError("predictions and targets cover different tasks")
    return sum(bce(probs[s], targets[s]).mean() for s in sorted(probs))


def loss(predictions, targets, head_kind: HeadKind) -> Tensor:
    if HeadKind(head_kind) is HeadKind.THREE_WAY:
        return three_way_loss(predictions, targets)
    return multitask_loss(predictions, targets)


def count_parameters(model: nn.Module) -> tuple[int, int]:
    """(trainable, total) parameter element counts."""
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return trainable, total
