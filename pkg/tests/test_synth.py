import filecmp
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnfusion.corpus import AnnotationError, TurnEvent, normalize_session, read_corpus
from turnfusion.synth import (BACKCHANNEL_PHRASES, SynthConfig, cue_direction, generate, generate_session,
                              make_vocab, verify_roundtrip, write_corpus)

SMALL = SynthConfig(n_sessions=6, sentences_per_session=15, vocab_size=40, frame_dim=4)


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_same_seed_byte_identical(tmp_path):
    a, b = write_corpus(SMALL, tmp_path / "a"), write_corpus(SMALL, tmp_path / "b")
    files = _tree(a)
    assert files == _tree(b) and files
    match, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors


def test_different_seed_differs():
    a = generate_session(SMALL, 0).session.words
    b = generate_session(SynthConfig(**{**SMALL.__dict__, "seed": 1}), 0).session.words
    assert a != b


def test_roundtrip_default_config():
    report = verify_roundtrip(generate(SynthConfig(n_sessions=10)))
    assert report.ok and report.match_rate == 1.0 and report.n_words > 1000


def test_roundtrip_from_disk(tmp_path):
    report = verify_roundtrip(write_corpus(SMALL, tmp_path))
    assert report.ok


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 1))
def test_roundtrip_any_config(seed, a, l, bc, tt):
    cfg = SynthConfig(n_sessions=2, sentences_per_session=10, vocab_size=30, frame_dim=2, acoustic_cue=a,
                      lexical_cue=l, backchannel_rate=bc, turn_rate=tt, seed=seed)
    assert verify_roundtrip(generate(cfg)).ok


def test_no_backchannels():
    sessions = generate(SynthConfig(n_sessions=4, backchannel_rate=0.0))
    assert all(v != TurnEvent.BACKCHANNEL for ss in sessions for v in ss.labels.values())
    assert verify_roundtrip(sessions).ok


def test_turn_labels_equal_speaker_changes():
    for ss in generate(SynthConfig(n_sessions=5, backchannel_rate=0.0)):
        speakers = [s[0].speaker for s in ss.session.sentences()]
        k = sum(x != y for x, y in zip(speakers, speakers[1:]))
        assert sum(v == TurnEvent.TURN_TAKING for v in ss.labels.values()) == k


def _main_sentences(ss, cfg):
    """Sentences drawn by the main speaker; backchannel sentences use the phrase list instead of the vocabulary."""
    vocab = set(make_vocab(cfg.vocab_size))
    for sent in ss.session.sentences():
        if sent[0].text in vocab:
            spk, sid = sent[0].speaker, sent[0].sentence_id
            yield [ss.labels[(spk, sid, j)] for j in range(len(sent))]


def test_priors_within_three_standard_errors():
    cfg = SynthConfig(n_sessions=40, backchannel_rate=0.15, turn_rate=0.4, seed=7)
    tt_hits = tt_trials = bc_hits = bc_trials = 0
    for ss in generate(cfg):
        labs = list(_main_sentences(ss, cfg))
        assert len(labs) == cfg.sentences_per_session
        # One turn-end draw per sentence except the session's last.
        tt_trials += len(labs) - 1
        tt_hits += sum(x[-1] == TurnEvent.TURN_TAKING for x in labs)
        # One backchannel draw per word that is not turn-final.
        for x in labs:
            bc_trials += len(x) - (x[-1] == TurnEvent.TURN_TAKING)
            bc_hits += sum(v == TurnEvent.BACKCHANNEL for v in x)
    for hits, n, p in ((tt_hits, tt_trials, cfg.turn_rate), (bc_hits, bc_trials, cfg.backchannel_rate)):
        assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_vocab_too_small():
    with pytest.raises(ValueError):
        SynthConfig(vocab_size=10, n_triggers=4)


@pytest.mark.parametrize("field,value", [("acoustic_cue", 1.5), ("backchannel_rate", -0.1), ("n_sessions", 0)])
def test_invalid_config(field, value):
    with pytest.raises(ValueError):
        SynthConfig(**{field: value})


def test_output_parses_without_warnings(tmp_path, caplog):
    root = write_corpus(SMALL, tmp_path)
    with caplog.at_level(logging.WARNING):
        for s in read_corpus(root / "sessions"):
            assert normalize_session(s, on_error="raise") == s
    assert not caplog.records


def test_acoustic_cue_on_turn_final_frames():
    cfg = SynthConfig(n_sessions=8, acoustic_cue=0.8, lexical_cue=0.0)
    u = cue_direction(cfg)
    final, other = [], []
    for ss in generate(cfg):
        for sent in ss.session.sentences():
            spk, sid = sent[0].speaker, sent[0].sentence_id
            mat = ss.frames[(spk, sid)]
            base = round(sent[0].start * cfg.frame_rate)
            for j, w in enumerate(sent):
                seg = mat[round(w.start * cfg.frame_rate) - base : round(w.end * cfg.frame_rate) - base]
                proj = float((seg @ u).mean())
                (final if ss.labels[(spk, sid, j)] == TurnEvent.TURN_TAKING else other).append(proj)
    assert np.mean(final) == pytest.approx(0.8 * cfg.cue_scale, abs=0.2)
    assert abs(np.mean(other)) < 0.1


def test_no_cues_means_no_signal():
    cfg = SynthConfig(n_sessions=20, acoustic_cue=0.0, lexical_cue=0.0)
    triggers = set(make_vocab(cfg.vocab_size)[: cfg.n_triggers])
    u = cue_direction(cfg)
    dur = {0: [], 2: []}
    proj = {0: [], 2: []}
    trig = {0: 0, 1: 0, 2: 0}
    for ss in generate(cfg):
        for sent in ss.session.sentences():
            spk, sid = sent[0].speaker, sent[0].sentence_id
            mat = ss.frames[(spk, sid)]
            base = round(sent[0].start * cfg.frame_rate)
            for j, w in enumerate(sent):
                lab = ss.labels[(spk, sid, j)]
                trig[lab] += w.text in triggers
                if lab in dur:
                    dur[lab].append(w.end - w.start)
                    seg = mat[round(w.start * cfg.frame_rate) - base : round(w.end * cfg.frame_rate) - base]
                    proj[lab].extend(seg @ u)
    assert trig == {0: 0, 1: 0, 2: 0}
    for d in (dur, proj):
        se = math.sqrt(np.var(d[0]) / len(d[0]) + np.var(d[2]) / len(d[2]))
        assert abs(np.mean(d[0]) - np.mean(d[2])) < 4 * se


def test_lexical_cue_marks_backchannel_positions():
    cfg = SynthConfig(n_sessions=10, acoustic_cue=0.0, lexical_cue=1.0)
    triggers = set(make_vocab(cfg.vocab_size)[: cfg.n_triggers])
    for ss in generate(cfg):
        for sent in ss.session.sentences():
            spk, sid = sent[0].speaker, sent[0].sentence_id
            for j, w in enumerate(sent):
                assert (w.text in triggers) == (ss.labels[(spk, sid, j)] == TurnEvent.BACKCHANNEL)


def test_times_on_frame_grid():
    cfg = SMALL
    for ss in generate(cfg):
        for w in ss.session.words:
            for t in (w.start, w.end):
                assert abs(t * cfg.frame_rate - round(t * cfg.frame_rate)) < 1e-9


@pytest.mark.parametrize("seed", [0, 1])
def test_acoustic_cue_alone_is_learnable_only_acoustically(tmp_path, seed):
    from turnfusion.experiments import evaluate_mode, synthetic_data
    from turnfusion.model import FusionOption

    data = synthetic_data(tmp_path, seed, n_sessions=30, lexical_cue=0.0)
    tt = {m: evaluate_mode(data, m, seed, epochs=3).per_class["turn_taking"]
          for m in (FusionOption.ACOUSTIC_ONLY, FusionOption.TEXT_ONLY)}
    m = tt[FusionOption.TEXT_ONLY]
    # Standard error of the Mann-Whitney AUC under the null of no signal.
    se = math.sqrt((m.n_pos + m.n_neg + 1) / (12 * m.n_pos * m.n_neg))
    assert tt[FusionOption.ACOUSTIC_ONLY].auc > 0.5 + 3 * se
    assert abs(m.auc - 0.5) < 3 * se
