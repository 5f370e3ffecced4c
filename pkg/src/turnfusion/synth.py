"""Seeded generator of desk-scale two-party sessions with controllable cues.

Acoustic cue: frames of every turn-final word are shifted along a fixed
direction by `acoustic_cue * cue_scale`, and the word is lengthened by a
factor (1 + acoustic_cue). Lexical cue: a word that receives a backchannel
is replaced by one of a few trigger tokens with probability `lexical_cue`.
With both cues at zero, word content and frames are independent of labels
and sentence lengths are geometric, so the labels carry no signal.

Corpus layout under the output directory:
    sessions/<session_id>.jsonl    word-aligned transcripts
    features/<session_id>/...      per-sentence frame matrices (see features.py)
    labels/<session_id>.jsonl      ground-truth word labels
    lexicon.txt                    the backchannel phrases used
    synth_config.json
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (AlignedWord, BackchannelLexicon, DialogSession, TurnEvent, label_session,
                     read_session, write_session)
from .features import feature_path, read_frames, write_frames

BACKCHANNEL_PHRASES = (
    "yeah", "uh-huh", "right", "okay", "oh", "yes", "sure", "really", "wow", "huh",
    "mm-hmm", "um-hum", "oh okay", "oh yeah", "i see", "oh really", "that's right",
    "oh wow", "yeah yeah", "all right",
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def make_vocab(size: int) -> list[str]:
    """Deterministic two-syllable pseudo-words, disjoint from the backchannel phrases."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    words = ["".join(p) for p in itertools.product(syllables, repeat=2)]
    if size > len(words):
        raise ValueError(f"vocab_size {size} exceeds the {len(words)} available pseudo-words")
    return words[:size]


@dataclass(frozen=True)
class SynthConfig:
    n_sessions: int = 60
    sentences_per_session: int = 40
    vocab_size: int = 200
    frame_dim: int = 16
    frame_rate: int = 50
    acoustic_cue: float = 0.8
    lexical_cue: float = 0.8
    backchannel_rate: float = 0.1
    turn_rate: float = 0.5
    mean_sentence_words: float = 6.0
    n_triggers: int = 4
    cue_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for name in ("acoustic_cue", "lexical_cue", "backchannel_rate", "turn_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_sessions < 1 or self.sentences_per_session < 1:
            raise ValueError("need at least one session and one sentence")
        if self.frame_dim < 1 or self.frame_rate < 1 or self.mean_sentence_words < 1:
            raise ValueError("frame_dim, frame_rate and mean_sentence_words must be >= 1")
        if self.vocab_size < self.n_triggers + 8:
            raise ValueError(f"vocab_size {self.vocab_size} too small to host {self.n_triggers} trigger tokens")


@dataclass
class SynthSession:
    session: DialogSession
    frames: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    labels: dict[tuple[str, int, int], int] = field(default_factory=dict)  # (speaker, sentence, index) -> label


def cue_direction(config: SynthConfig) -> np.ndarray:
    u = np.random.default_rng([config.seed, 0xC0E]).standard_normal(config.frame_dim)
    return u / np.linalg.norm(u)


def generate_session(config: SynthConfig, index: int) -> SynthSession:
    rng = np.random.default_rng([config.seed, index])
    vocab = make_vocab(config.vocab_size)
    triggers, regular = vocab[: config.n_triggers], vocab[config.n_triggers:]
    direction = cue_direction(config)
    rate = config.frame_rate
    sid = f"s{index:04d}"

    words: list[AlignedWord] = []
    out = SynthSession(DialogSession(sid, []))
    next_sent = {"A": 0, "B": 0}
    speaker = "A" if rng.random() < 0.5 else "B"
    frame = 0

    def add_sentence(spk: str, texts: list[str], starts: list[int], ends: list[int],
                     labels: list[int], cue_word: int | None) -> None:
        sent_id = next_sent[spk]
        next_sent[spk] += 1
        base = starts[0]
        mat = rng.standard_normal((ends[-1] - base, config.frame_dim))
        if cue_word is not None:
            mat[starts[cue_word] - base : ends[cue_word] - base] += config.acoustic_cue * config.cue_scale * direction
        out.frames[(spk, sent_id)] = mat.astype(np.float32)
        for j, (t, s, e, lab) in enumerate(zip(texts, starts, ends, labels)):
            words.append(AlignedWord(spk, sent_id, t, s / rate, e / rate))
            out.labels[(spk, sent_id, j)] = lab

    n = config.sentences_per_session
    for k in range(n):
        listener = "B" if speaker == "A" else "A"
        n_words = int(rng.geometric(1.0 / config.mean_sentence_words))
        turn_end = k < n - 1 and rng.random() < config.turn_rate
        texts, starts, ends, labels = [], [], [], []
        backchannels = []
        for j in range(n_words):
            final = turn_end and j == n_words - 1
            dur = int(rng.integers(5, 13))
            if final:
                dur = int(round(dur * (1 + config.acoustic_cue)))
            text = regular[int(rng.integers(len(regular)))]
            label = TurnEvent.TURN_TAKING if final else TurnEvent.CONTINUING_SPEECH
            if not final and rng.random() < config.backchannel_rate:
                label = TurnEvent.BACKCHANNEL
                if rng.random() < config.lexical_cue:
                    text = triggers[int(rng.integers(len(triggers)))]
                backchannels.append(frame + int(rng.integers(dur)))
            texts.append(text)
            starts.append(frame)
            ends.append(frame + dur)
            labels.append(int(label))
            frame += dur + int(rng.integers(0, 2))
        add_sentence(speaker, texts, starts, ends, labels, n_words - 1 if turn_end else None)

        for bc_start in backchannels:
            phrase = BACKCHANNEL_PHRASES[int(rng.integers(len(BACKCHANNEL_PHRASES)))].split()
            b_starts, b_ends, t = [], [], bc_start
            for _ in phrase:
                d = int(rng.integers(4, 8))
                b_starts.append(t)
                b_ends.append(t + d)
                t += d
            add_sentence(listener, phrase, b_starts, b_ends, [0] * len(phrase), None)

        if turn_end:
            speaker = listener
            frame += int(rng.integers(10, 21))
        else:
            frame += int(rng.integers(3, 9))

    out.session = DialogSession(sid, words)
    return out


def generate(config: SynthConfig) -> list[SynthSession]:
    return [generate_session(config, i) for i in range(config.n_sessions)]


def write_corpus(config: SynthConfig, out_dir: str | Path, sessions: list[SynthSession] | None = None) -> Path:
    out = Path(out_dir)
    sessions = generate(config) if sessions is None else sessions
    (out / "sessions").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for ss in sessions:
        sid = ss.session.session_id
        write_session(ss.session, out / "sessions" / f"{sid}.jsonl")
        for (spk, sent), mat in sorted(ss.frames.items()):
            write_frames(feature_path(out / "features", sid, spk, sent), mat, config.frame_rate)
        with (out / "labels" / f"{sid}.jsonl").open("w") as f:
            for (spk, sent, j), lab in sorted(ss.labels.items()):
                f.write(json.dumps({"speaker": spk, "sentence_id": sent, "index": j, "label": lab}) + "\n")
    BackchannelLexicon.from_phrases(BACKCHANNEL_PHRASES).save(out / "lexicon.txt")
    (out / "synth_config.json").write_text(json.dumps(asdict(config), indent=1, sort_keys=True) + "\n")
    return out


def read_labels(path: str | Path) -> dict[tuple[str, int, int], int]:
    with Path(path).open() as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return {(r["speaker"], int(r["sentence_id"]), int(r["index"])): int(r["label"]) for r in rows}


@dataclass
class RoundtripReport:
    n_words: int
    n_match: int
    diffs: list[dict]

    @property
    def match_rate(self) -> float:
        return self.n_match / self.n_words if self.n_words else 1.0

    @property
    def ok(self) -> bool:
        return not self.diffs


def compare_labels(session: DialogSession, truth: dict[tuple[str, int, int], int],
                   lexicon: BackchannelLexicon) -> RoundtripReport:
    lab = label_session(session, lexicon)
    produced: dict[tuple[str, int, int], int] = {}
    position: dict[tuple[str, int], int] = {}
    for lw in lab.words:
        key = (lw.word.speaker, lw.word.sentence_id)
        j = position.get(key, 0)
        position[key] = j + 1
        produced[(*key, j)] = int(lw.label)
    diffs = []
    for key in sorted(set(truth) | set(produced)):
        if truth.get(key) != produced.get(key):
            diffs.append({"session": session.session_id, "word": list(key),
                          "expected": truth.get(key), "produced": produced.get(key)})
    n = len(set(truth) | set(produced))
    return RoundtripReport(n, n - len(diffs), diffs)


def verify_roundtrip(corpus: str | Path | list[SynthSession],
                     lexicon: BackchannelLexicon | None = None) -> RoundtripReport:
    """Run the labeling pipeline and compare with the generator's ground truth."""
    lexicon = lexicon or BackchannelLexicon.from_phrases(BACKCHANNEL_PHRASES)
    if isinstance(corpus, (str, Path)):
        root = Path(corpus)
        pairs = [(read_session(p), read_labels(root / "labels" / p.name))
                 for p in sorted((root / "sessions").glob("*.jsonl"))]
    else:
        pairs = [(ss.session, ss.labels) for ss in corpus]
    total = RoundtripReport(0, 0, [])
    for session, truth in pairs:
        r = compare_labels(session, truth, lexicon)
        total.n_words += r.n_words
        total.n_match += r.n_match
        total.diffs.extend(r.diffs)
    return total


def load_frames(corpus_dir: str | Path, session_id: str, speaker: str, sentence_id: int) -> np.ndarray:
    return read_frames(feature_path(Path(corpus_dir) / "features", session_id, speaker, sentence_id))[0]
