"""Desk-scale experiment drivers shared by the acceptance suite and scripts/."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import BackchannelLexicon, PreparedCorpus, prepare_corpus, read_corpus
from .features import FeatureStore
from .metrics import MetricsReport, report
from .model import EncoderConfig, FusionOption, HeadKind
from .synth import SynthConfig, write_corpus
from .train import REFERENCE_LEARNING_RATE, TrainConfig, score_samples, train

TOY_ENCODER = EncoderConfig(proj_dim=64, text_dim=32, text_layers=2, text_heads=2, max_len=128)
# The reference rate suits fine-tuning pretrained encoders; toy encoders start from scratch.
TOY_LR_SCALE = 20
TOY_LEARNING_RATE = TOY_LR_SCALE * REFERENCE_LEARNING_RATE
SINGLE_AND_FUSED = (FusionOption.ACOUSTIC_ONLY, FusionOption.TEXT_ONLY, FusionOption.FUSION_OPT1)


@dataclass
class SyntheticData:
    root: Path
    prepared: PreparedCorpus
    store: FeatureStore

    def split(self, name: str):
        return self.prepared.samples[name]


def synthetic_data(root: str | Path, seed: int, **synth_overrides) -> SyntheticData:
    config = SynthConfig(seed=seed, **synth_overrides)
    root = write_corpus(config, root)
    prepared = prepare_corpus(read_corpus(root / "sessions"),
                              lexicon=BackchannelLexicon.load(root / "lexicon.txt"), seed=seed)
    return SyntheticData(root, prepared, FeatureStore(root / "features"))


def evaluate_mode(data: SyntheticData, fusion: FusionOption, seed: int, *, head: HeadKind = HeadKind.THREE_WAY,
                  use_history: bool = False, epochs: int = 5, learning_rate: float = TOY_LEARNING_RATE,
                  encoder: EncoderConfig = TOY_ENCODER) -> MetricsReport:
    frame_dim = data.store.frames_for(data.split("train")[0]).shape[1]
    config = TrainConfig(learning_rate=learning_rate, epochs=epochs, fusion=fusion, head=head,
                         use_history=use_history, seed=seed, encoder=replace(encoder, frame_dim=frame_dim))
    result = train(config, data.split("train"), data.split("validation"), data.store)
    rep = report(score_samples(result.checkpoint, data.split("test"), data.store))
    rep.model = {"fusion": fusion.value, "head": head.value, "use_history": use_history, "low_rank": 0}
    return rep


def fusion_comparison(data: SyntheticData, seed: int, **kw) -> dict[FusionOption, MetricsReport]:
    return {mode: evaluate_mode(data, mode, seed, **kw) for mode in SINGLE_AND_FUSED}
