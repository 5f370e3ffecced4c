"""Multi-task instruction augmentation.

Every sample is replicated once per turn event, each copy prefixed with that
event's instruction and given a binary target: 1 when the instruction matches
the sample's own label, else 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import SPK_SELF, Sample, TurnEvent

INSTRUCTIONS = (
    "Identify if the current speaker will continue to speak at the end of the sentence.",
    "Identify if another speaker will backchannel at the end of the sentence.",
    "Identify if another speaker will take the turn at the end of the sentence.",
)
N_TASKS = len(INSTRUCTIONS)


def _check_index(s: int) -> int:
    if isinstance(s, bool) or int(s) != s or not 0 <= s < N_TASKS:
        raise ValueError(f"instruction index must be one of 0..{N_TASKS - 1}, got {s!r}")
    return int(s)


def instruction_text(s: int) -> str:
    return INSTRUCTIONS[_check_index(s)]


@dataclass(frozen=True)
class InstructionedSample:
    s: int
    text: str
    binary_label: int
    origin_sample_id: str

    def to_json(self) -> dict:
        return {"s": self.s, "text": self.text, "binary_label": self.binary_label,
                "origin_sample_id": self.origin_sample_id}


def compose_with_history(s: int, history: Sequence[tuple[str, str]], target: Sample,
                         max_history: int = 2) -> str:
    """`<instruction>: <mark> sent. <mark> sent. <spkSelf> target.`

    The instruction's closing period is replaced by the colon so "Identify"
    appears once.
    """
    if len(history) > max_history:
        raise ValueError(f"history has {len(history)} sentences, max is {max_history}")
    parts = [f"{mark} {text}." for mark, text in history]
    parts.append(f"{SPK_SELF} {' '.join(target.tokens)}.")
    return f"{instruction_text(s).rstrip('.')}: " + " ".join(parts)


def compose_plain(s: int, target: Sample) -> str:
    return f"{instruction_text(s)} {' '.join(target.tokens)}"


def compose_text(sample: Sample, s: int | None = None, use_history: bool = False,
                 max_history: int = 2) -> str:
    """Model input text for a sample; s=None means no instruction (three-way head)."""
    history = sample.history[-max_history:] if use_history else ()
    if s is None:
        if not use_history:
            return " ".join(sample.tokens)
        parts = [f"{mark} {text}." for mark, text in history]
        parts.append(f"{SPK_SELF} {' '.join(sample.tokens)}.")
        return " ".join(parts)
    if use_history:
        return compose_with_history(s, history, sample, max_history)
    return compose_plain(s, sample)


def augment(batch: Sequence[Sample], use_history: bool = False,
            max_history: int = 2) -> dict[int, list[InstructionedSample]]:
    if not batch:
        raise ValueError("cannot augment an empty batch")
    out = {}
    for s in range(N_TASKS):
        out[s] = [
            InstructionedSample(
                s=s,
                text=compose_text(x, s, use_history, max_history),
                binary_label=int(TurnEvent(x.label) == s),
                origin_sample_id=x.sample_id,
            )
            for x in batch
        ]
    return out


def write_augmented(augmented: dict[int, list[InstructionedSample]], path: str | Path) -> None:
    with Path(path).open("w") as f:
        for s in sorted(augmented):
            for item in augmented[s]:
                f.write(json.dumps(item.to_json()) + "\n")


def read_augmented(path: str | Path) -> Iterable[InstructionedSample]:
    with Path(path).open() as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                yield InstructionedSample(_check_index(d["s"]), d["text"], int(d["binary_label"]),
                                          d["origin_sample_id"])
