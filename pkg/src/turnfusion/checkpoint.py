"""Checkpoint container: `checkpoint.json` manifest plus a raw `params.bin` blob.

The manifest holds the encoder config, fusion option, head kind, vocabulary,
training metadata, and a parameter index of (name, dtype, shape, offset).
Arrays are stored little-endian, row-major, back to back in `params.bin`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import EncoderConfig, FusionOption, HeadKind, TurnModel, count_parameters
from .vocab import Vocab

FORMAT = "turnfusion-checkpoint"
VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    encoder: EncoderConfig
    fusion: FusionOption
    head: HeadKind
    low_rank: int = 0
    vocab: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: TurnModel, vocab: Vocab | None = None, **metadata) -> Checkpoint:
        params = {}
        for name, t in model.state_dict().items():
            if t.dtype not in _DTYPES:
                raise TypeError(f"unsupported dtype {t.dtype} for {name}")
            params[name] = t.detach().cpu().numpy().copy()
        trainable, total = count_parameters(model)
        meta = {"trainable_parameters": trainable, "total_parameters": total,
                "trainable_fraction": trainable / total if total else 0.0}
        meta.update(metadata)
        return cls(params, model.config, model.fusion, model.head_kind, model.low_rank,
                   list(vocab.tokens) if vocab is not None else [], meta)

    def build_model(self) -> TurnModel:
        model = TurnModel(self.encoder, self.fusion, self.head, self.low_rank)
        dtype = {a.dtype for a in self.params.values()}
        model.to(torch.float64 if dtype == {np.dtype("<f8")} else torch.float32)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        model.load_state_dict(state, strict=True)
        return model

    def get_vocab(self) -> Vocab | None:
        return Vocab(self.vocab) if self.vocab else None

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        offset = 0
        with (directory / "params.bin").open("wb") as f:
            for name in sorted(self.params):
                arr = self.params[name]
                code = "<f8" if arr.dtype == np.float64 else "<f4"
                raw = np.ascontiguousarray(arr, dtype=code).tobytes()
                f.write(raw)
                index.append({"name": name, "dtype": code, "shape": list(arr.shape),
                              "offset": offset, "nbytes": len(raw)})
                offset += len(raw)
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "encoder": self.encoder.to_dict(),
            "fusion": self.fusion.value,
            "head": self.head.value,
            "low_rank": self.low_rank,
            "vocab": self.vocab,
            "metadata": self.metadata,
            "params": index,
        }
        (directory / "checkpoint.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> Checkpoint:
        directory = Path(directory)
        manifest = json.loads((directory / "checkpoint.json").read_text())
        if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
            raise ValueError(f"{directory} is not a version-{VERSION} {FORMAT}")
        blob = (directory / "params.bin").read_bytes()
        params = {}
        for entry in manifest["params"]:
            raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
            params[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        return cls(
            params=params,
            encoder=EncoderConfig(**manifest["encoder"]),
            fusion=FusionOption(manifest["fusion"]),
            head=HeadKind(manifest["head"]),
            low_rank=int(manifest["low_rank"]),
            vocab=list(manifest["vocab"]),
            metadata=manifest["metadata"],
        )
