"""Dialog transcript -> word-level turn-event labels -> partial-utterance samples.

Input sessions are time-aligned word lists for two speakers. The pipeline
normalizes corpus annotations, pulls isolated backchannel phrases out of the
dialog, serializes the remaining sentences, labels speaker changes and
backchannel positions, and finally emits one sample per word position.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPK_SELF = "<spkSelf>"
SPK_OTHER = "<spkOther>"
SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_SPLIT_RATIO = (2000, 300, 138)


class TurnEvent(enum.IntEnum):
    CONTINUING_SPEECH = 0
    BACKCHANNEL = 1
    TURN_TAKING = 2


@dataclass(frozen=True)
class AlignedWord:
    speaker: str
    sentence_id: int
    text: str
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad word timing {self.start}..{self.end} for {self.text!r}")

    def replace_text(self, text: str) -> AlignedWord:
        return AlignedWord(self.speaker, self.sentence_id, text, self.start, self.end)


@dataclass
class DialogSession:
    session_id: str
    words: list[AlignedWord]

    def __post_init__(self):
        speakers = {w.speaker for w in self.words}
        # A one-speaker session is degenerate but legal (no speaker changes).
        if len(speakers) > 2:
            raise ValueError(f"session {self.session_id} has {len(speakers)} speakers, expected 2")

    @property
    def speakers(self) -> list[str]:
        return sorted({w.speaker for w in self.words})

    def sentences(self) -> list[list[AlignedWord]]:
        """Per-speaker sentences, each sorted by start, ordered by sentence start."""
        groups: dict[tuple[str, int], list[AlignedWord]] = {}
        for w in self.words:
            groups.setdefault((w.speaker, w.sentence_id), []).append(w)
        sents = [sorted(ws, key=lambda w: (w.start, w.end)) for ws in groups.values()]
        sents.sort(key=lambda ws: (ws[0].start, ws[0].speaker, ws[0].sentence_id))
        return sents


@dataclass(frozen=True)
class BackchannelLexicon:
    phrases: frozenset[str]
    max_words: int = 2

    def __post_init__(self):
        for p in self.phrases:
            n = len(p.split())
            if not 1 <= n <= self.max_words or p != p.lower():
                raise ValueError(f"invalid backchannel phrase {p!r}")

    def __contains__(self, phrase: str) -> bool:
        return phrase in self.phrases

    def __len__(self) -> int:
        return len(self.phrases)

    @classmethod
    def from_phrases(cls, phrases: Iterable[str]) -> BackchannelLexicon:
        return cls(frozenset(" ".join(p.lower().split()) for p in phrases if p.strip()))

    @classmethod
    def load(cls, path: str | Path) -> BackchannelLexicon:
        return cls.from_phrases(Path(path).read_text().splitlines())

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(p + "\n" for p in sorted(self.phrases)))


@dataclass(frozen=True)
class BackchannelCandidate:
    phrase: str
    speaker: str
    start: float
    end: float
    words: tuple[AlignedWord, ...]


@dataclass(frozen=True)
class LabeledWord:
    word: AlignedWord
    label: TurnEvent = TurnEvent.CONTINUING_SPEECH


@dataclass
class Labeling:
    """Output of serialize_and_label plus the bookkeeping counters."""

    words: list[LabeledWord]
    n_collisions: int = 0
    n_dropped_candidates: int = 0
    n_speaker_changes: int = 0


@dataclass(frozen=True)
class AcousticRef:
    session_id: str
    start: float
    end: float


@dataclass(frozen=True)
class Sample:
    sample_id: str
    session_id: str
    speaker: str
    sentence_id: int
    tokens: tuple[str, ...]
    acoustic_ref: AcousticRef
    history: tuple[tuple[str, str], ...]  # (speaker mark, sentence text)
    label: TurnEvent

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "session_id": self.session_id,
            "speaker": self.speaker,
            "sentence_id": self.sentence_id,
            "tokens": list(self.tokens),
            "acoustic_ref": [self.acoustic_ref.session_id, self.acoustic_ref.start, self.acoustic_ref.end],
            "history": [list(h) for h in self.history],
            "label": int(self.label),
        }

    @classmethod
    def from_json(cls, d: dict) -> Sample:
        sid, start, end = d["acoustic_ref"]
        return cls(
            sample_id=d["sample_id"],
            session_id=d["session_id"],
            speaker=d["speaker"],
            sentence_id=int(d["sentence_id"]),
            tokens=tuple(d["tokens"]),
            acoustic_ref=AcousticRef(sid, float(start), float(end)),
            history=tuple((m, t) for m, t in d["history"]),
            label=TurnEvent(int(d["label"])),
        )


# --------------------------------------------------------------------------
# normalization

class AnnotationError(ValueError):
    pass


NON_SPEECH = {"silence", "noise", "laughter", "vocalized-noise"}

_SUBSTITUTION = re.compile(r"^\[([^\[\]/]+)/([^\[\]/]+)\]$")
_COMPLETION = re.compile(r"^-?([^\[\]\-]*)\[([^\[\]]+)\]([^\[\]\-]*)-?$")
_LAUGH_WORD = re.compile(r"^\[laughter-([^\[\]]+)\]$")
_BARE = re.compile(r"^\[([^\[\]]+)\]$")


def _check_brackets(token: str) -> None:
    depth = 0
    for ch in token:
        if ch == "[":
            depth += 1
            if depth > 1:
                raise AnnotationError(f"nested brackets in {token!r}")
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise AnnotationError(f"unbalanced brackets in {token!r}")
    if depth:
        raise AnnotationError(f"unbalanced brackets in {token!r}")


def normalize_token(token: str) -> str | None:
    """Apply the annotation rule table to one token; None means drop.

    Rules, first match wins:
      [silence], [noise], [laughter], [vocalized-noise]  -> dropped
      [laughter-word]                                    -> word
      [spoken/intended]                                  -> intended
      pre[fix]- / pre[fix] / -[pre]fix                   -> prefix
      any other bracket form                             -> dropped with a warning

    Raises AnnotationError on malformed bracket nesting.
    """
    tok = token.strip().lower()
    if "[" not in tok and "]" not in tok:
        return tok or None
    _check_brackets(tok)
    if (m := _BARE.match(tok)) and m.group(1) in NON_SPEECH:
        return None
    if m := _LAUGH_WORD.match(tok):
        return m.group(1)
    if m := _SUBSTITUTION.match(tok):
        return m.group(2).strip() or None
    if (m := _COMPLETION.match(tok)) and (m.group(1) or m.group(3)):
        return m.group(1) + m.group(2) + m.group(3)
    log.warning("dropping unknown annotation %r", token)
    return None


def normalize_words(raw: Sequence[AlignedWord], on_error: str = "warn") -> list[AlignedWord]:
    if on_error not in ("warn", "raise"):
        raise ValueError(f"on_error must be 'warn' or 'raise', got {on_error!r}")
    out = []
    for w in raw:
        try:
            text = normalize_token(w.text)
        except AnnotationError as e:
            if on_error == "raise":
                raise
            log.warning("dropping word at %.3fs: %s", w.start, e)
            continue
        if text:
            out.append(w.replace_text(text))
    return out


def normalize_session(session: DialogSession, on_error: str = "warn") -> DialogSession:
    return DialogSession(session.session_id, normalize_words(session.words, on_error))


# --------------------------------------------------------------------------
# backchannels and labeling

def build_lexicon(sessions: Iterable[DialogSession], size: int = 20) -> BackchannelLexicon:
    """Most frequent isolated one/two-word sentences; ties broken alphabetically."""
    counts: Counter[str] = Counter()
    for sess in sessions:
        for sent in sess.sentences():
            if len(sent) <= 2:
                counts[" ".join(w.text for w in sent)] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return BackchannelLexicon.from_phrases(p for p, _ in ranked[:size])


def extract_backchannel_candidates(
    session: DialogSession, lexicon: BackchannelLexicon
) -> tuple[DialogSession, list[BackchannelCandidate]]:
    kept: list[AlignedWord] = []
    candidates = []
    for sent in session.sentences():
        phrase = " ".join(w.text.lower() for w in sent)
        if len(sent) <= lexicon.max_words and phrase in lexicon:
            candidates.append(
                BackchannelCandidate(phrase, sent[0].speaker, sent[0].start, sent[-1].end, tuple(sent))
            )
        else:
            kept.extend(sent)
    return DialogSession(session.session_id, kept), candidates


def serialize_and_label(
    pruned: DialogSession, candidates: Sequence[BackchannelCandidate]
) -> Labeling:
    stream = [w for sent in pruned.sentences() for w in sent]
    labels = [TurnEvent.CONTINUING_SPEECH] * len(stream)

    n_changes = 0
    for i in range(len(stream) - 1):
        if stream[i].speaker != stream[i + 1].speaker:
            labels[i] = TurnEvent.TURN_TAKING
            n_changes += 1

    # Backchannel blocks are re-inserted right after their anchor word.
    inserts: dict[int, list[BackchannelCandidate]] = {}
    collisions = dropped = 0
    for cand in sorted(candidates, key=lambda c: (c.start, c.speaker)):
        anchor = None
        for i, w in enumerate(stream):
            if w.speaker != cand.speaker and w.start <= cand.start:
                if anchor is None or w.start >= stream[anchor].start:
                    anchor = i
        if anchor is None:
            dropped += 1
            continue
        if labels[anchor] == TurnEvent.TURN_TAKING:
            collisions += 1
        else:
            labels[anchor] = TurnEvent.BACKCHANNEL
        inserts.setdefault(anchor, []).append(cand)

    out = []
    for i, w in enumerate(stream):
        out.append(LabeledWord(w, labels[i]))
        for cand in inserts.get(i, ()):
            out.extend(LabeledWord(bw) for bw in cand.words)
    if collisions:
        log.info("%s: %d backchannel/turn-taking collisions", pruned.session_id, collisions)
    if dropped:
        log.info("%s: %d backchannel candidates without an anchor", pruned.session_id, dropped)
    return Labeling(out, collisions, dropped, n_changes)


def label_session(session: DialogSession, lexicon: BackchannelLexicon, on_error: str = "warn") -> Labeling:
    normalized = normalize_session(session, on_error)
    pruned, candidates = extract_backchannel_candidates(normalized, lexicon)
    return serialize_and_label(pruned, candidates)


def build_samples(session_id: str, labeled: Sequence[LabeledWord], history_len: int = 2) -> list[Sample]:
    # Sentences in order of first appearance in the labeled stream.
    order: list[tuple[str, int]] = []
    members: dict[tuple[str, int], list[LabeledWord]] = {}
    for lw in labeled:
        key = (lw.word.speaker, lw.word.sentence_id)
        if key not in members:
            order.append(key)
            members[key] = []
        members[key].append(lw)
    spans = {k: (v[0].word.start, max(x.word.end for x in v)) for k, v in members.items()}
    by_end = sorted(order, key=lambda k: (spans[k][1], spans[k][0]))

    samples = []
    for key in order:
        speaker, sent_id = key
        sent_start = spans[key][0]
        history: list[tuple[str, str]] = []
        if history_len > 0:
            prior = [k for k in by_end if k != key and spans[k][1] <= sent_start]
            for hk in prior[-history_len:]:
                mark = SPK_SELF if hk[0] == speaker else SPK_OTHER
                history.append((mark, " ".join(x.word.text for x in members[hk])))
        words = members[key]
        for k, lw in enumerate(words):
            samples.append(
                Sample(
                    sample_id=f"{session_id}:{speaker}:{sent_id}:{k}",
                    session_id=session_id,
                    speaker=speaker,
                    sentence_id=sent_id,
                    tokens=tuple(x.word.text for x in words[: k + 1]),
                    acoustic_ref=AcousticRef(session_id, sent_start, lw.word.end),
                    history=tuple(history),
                    label=lw.label,
                )
            )
    return samples


# --------------------------------------------------------------------------
# splits and class balancing

def split_sessions(
    session_ids: Sequence[str], ratio: Sequence[float] = DEFAULT_SPLIT_RATIO
) -> dict[str, str]:
    """Contiguous, deterministic split with largest-remainder rounding.

    Any split with a nonzero ratio is guaranteed at least one session; the
    shortfall is taken from the currently largest split.
    """
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ValueError(f"invalid split ratio {ratio}")
    n = len(session_ids)
    needed = sum(1 for r in ratio if r > 0)
    if n < needed:
        raise ValueError(f"{n} sessions cannot fill {needed} splits")
    total = float(sum(ratio))
    quotas = [n * r / total for r in ratio]
    counts = [math.floor(q) for q in quotas]
    by_remainder = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if ratio[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] = 1
    out = {}
    pos = 0
    for name, c in zip(SPLIT_NAMES, counts):
        for sid in session_ids[pos : pos + c]:
            out[sid] = name
        pos += c
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def downsample_continuing(samples: Sequence[Sample], rng_seed: int) -> list[Sample]:
    """Subsample ContinuingSpeech to the mean of the other two class counts.

    Input order is preserved; the other classes pass through untouched.
    """
    counts = Counter(s.label for s in samples)
    target = round_half_up((counts[TurnEvent.BACKCHANNEL] + counts[TurnEvent.TURN_TAKING]) / 2)
    cont = [i for i, s in enumerate(samples) if s.label == TurnEvent.CONTINUING_SPEECH]
    if len(cont) <= target:
        return list(samples)
    rng = np.random.default_rng(rng_seed)
    keep = set(int(i) for i in rng.choice(np.asarray(cont), size=target, replace=False))
    return [s for i, s in enumerate(samples) if s.label != TurnEvent.CONTINUING_SPEECH or i in keep]


def class_counts(samples: Iterable[Sample]) -> dict[str, int]:
    counts = Counter(s.label for s in samples)
    return {e.name.lower(): counts[e] for e in TurnEvent}


# --------------------------------------------------------------------------
# file formats

def read_session(path: str | Path, session_id: str | None = None) -> DialogSession:
    path = Path(path)
    words = []
    with path.open() as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                words.append(
                    AlignedWord(str(d["speaker"]), int(d["sentence_id"]), str(d["word"]), float(d["start"]), float(d["end"]))
                )
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
    return DialogSession(session_id or path.stem, words)


def write_session(session: DialogSession, path: str | Path) -> None:
    with Path(path).open("w") as f:
        for w in session.words:
            f.write(json.dumps({"speaker": w.speaker, "sentence_id": w.sentence_id, "word": w.text,
                                "start": w.start, "end": w.end}) + "\n")


def read_corpus(directory: str | Path) -> list[DialogSession]:
    """All `*.jsonl` session files in a directory, sorted by session id."""
    paths = sorted(Path(directory).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no session files in {directory}")
    return [read_session(p) for p in paths]


def write_samples(samples: Iterable[Sample], path: str | Path) -> None:
    with Path(path).open("w") as f:
        for s in samples:
            f.write(json.dumps(s.to_json()) + "\n")


def read_samples(path: str | Path) -> list[Sample]:
    with Path(path).open() as f:
        return [Sample.from_json(json.loads(line)) for line in f if line.strip()]


@dataclass
class PreparedCorpus:
    splits: dict[str, str]
    lexicon: BackchannelLexicon
    samples: dict[str, list[Sample]] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def prepare_corpus(
    sessions: Sequence[DialogSession],
    *,
    lexicon: BackchannelLexicon | None = None,
    lexicon_size: int = 20,
    ratio: Sequence[float] = DEFAULT_SPLIT_RATIO,
    history_len: int = 2,
    seed: int = 0,
    on_error: str = "warn",
) -> PreparedCorpus:
    """Run the whole pipeline; training and validation splits are downsampled."""
    splits = split_sessions([s.session_id for s in sessions], ratio)
    normalized = [normalize_session(s, on_error) for s in sessions]
    if lexicon is None:
        lexicon = build_lexicon([s for s in normalized if splits[s.session_id] == "train"], lexicon_size)

    per_split: dict[str, list[Sample]] = {name: [] for name in SPLIT_NAMES}
    stats = {"collisions": 0, "dropped_candidates": 0, "speaker_changes": 0, "words": 0}
    for sess in normalized:
        pruned, cands = extract_backchannel_candidates(sess, lexicon)
        lab = serialize_and_label(pruned, cands)
        stats["collisions"] += lab.n_collisions
        stats["dropped_candidates"] += lab.n_dropped_candidates
        stats["speaker_changes"] += lab.n_speaker_changes
        stats["words"] += len(lab.words)
        per_split[splits[sess.session_id]].extend(build_samples(sess.session_id, lab.words, history_len))

    stats["full_counts"] = {name: class_counts(per_split[name]) for name in SPLIT_NAMES}
    per_split["train"] = downsample_continuing(per_split["train"], seed)
    per_split["validation"] = downsample_continuing(per_split["validation"], seed + 1)
    stats["counts"] = {name: class_counts(per_split[name]) for name in SPLIT_NAMES}
    return PreparedCorpus(splits, lexicon, per_split, stats)
