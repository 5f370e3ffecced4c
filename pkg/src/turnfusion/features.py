"""Per-sentence acoustic frame matrices on disk.

Layout: `<root>/<session_id>/<speaker>_<sentence_id>.f32` holds a row-major
little-endian float32 T x d_f matrix, with a `.json` sidecar
{"T": ..., "d_f": ..., "frame_rate": ...}. Frame 0 starts at the sentence's
first word.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import Sample


def feature_path(root: str | Path, session_id: str, speaker: str, sentence_id: int) -> Path:
    return Path(root) / session_id / f"{speaker}_{sentence_id}.f32"


def write_frames(path: Path, frames: np.ndarray, frame_rate: float) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("frames must be a T x d_f matrix")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(frames.tobytes())
    sidecar = {"T": int(frames.shape[0]), "d_f": int(frames.shape[1]), "frame_rate": frame_rate}
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_frames(path: Path) -> tuple[np.ndarray, float]:
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != meta["T"] * meta["d_f"]:
        raise ValueError(f"{path}: size does not match sidecar T x d_f")
    return data.reshape(meta["T"], meta["d_f"]), float(meta["frame_rate"])


class FeatureStore:
    """Read-through cache of sentence matrices; slices frames for a sample prefix."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"feature directory {self.root} does not exist")
        self._cache: dict[Path, tuple[np.ndarray, float]] = {}

    def sentence(self, session_id: str, speaker: str, sentence_id: int) -> tuple[np.ndarray, float]:
        path = feature_path(self.root, session_id, speaker, sentence_id)
        if path not in self._cache:
            self._cache[path] = read_frames(path)
        return self._cache[path]

    def frames_for(self, sample: Sample) -> np.ndarray:
        """Frames from the sentence start through the target word's end (at least one)."""
        frames, rate = self.sentence(sample.session_id, sample.speaker, sample.sentence_id)
        span = sample.acoustic_ref.end - sample.acoustic_ref.start
        n = int(round(span * rate))
        return frames[: max(1, min(frames.shape[0], n))]
