import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnfusion.corpus import (
    AlignedWord, AnnotationError, BackchannelLexicon, DialogSession, Sample, TurnEvent,
    build_lexicon, build_samples, downsample_continuing, extract_backchannel_candidates,
    normalize_token, normalize_words, prepare_corpus, read_samples, read_session, round_half_up,
    serialize_and_label, split_sessions, write_samples, write_session, AcousticRef,
)


def W(spk, sent, text, start, end=None):
    return AlignedWord(spk, sent, text, start, start + 0.2 if end is None else end)


def session(*words, sid="sess"):
    return DialogSession(sid, list(words))


LEX = BackchannelLexicon.from_phrases(["uh-huh", "yeah", "oh okay", "right"])


# -- normalization -----------------------------------------------------------

@pytest.mark.parametrize("token,expected", [
    ("[silence]", None),
    ("[noise]", None),
    ("[laughter]", None),
    ("[vocalized-noise]", None),
    ("yeah", "yeah"),
    ("Yeah", "yeah"),
    ("[cuz/because]", "because"),
    ("reali[zing]-", "realizing"),
    ("reali[zing]", "realizing"),
    ("-[th]ey", "they"),
    ("[laughter-yes]", "yes"),
    ("uh-huh", "uh-huh"),
    ("[mystery]", None),
])
def test_normalize_token_rule_table(token, expected):
    assert normalize_token(token) == expected


@pytest.mark.parametrize("bad", ["[[x]]", "[abc", "ab]c", "a[b]c]"])
def test_malformed_brackets(bad):
    with pytest.raises(AnnotationError):
        normalize_token(bad)
    words = [W("A", 0, bad, 0.0), W("A", 0, "ok", 0.3)]
    assert [w.text for w in normalize_words(words)] == ["ok"]
    with pytest.raises(AnnotationError):
        normalize_words(words, on_error="raise")


def test_normalize_preserves_timestamps():
    words = [W("A", 0, "[silence]", 0.0, 0.4), W("A", 0, "reali[zing]-", 0.4, 0.9)]
    out = normalize_words(words)
    assert out == [AlignedWord("A", 0, "realizing", 0.4, 0.9)]


token_alphabet = st.sampled_from(list("abcxyz-'[]/") + ["[silence]", "[noise]", "uh", "[a/b]", "x[yz]-"])


@given(st.lists(st.lists(token_alphabet, min_size=1, max_size=5).map("".join), max_size=12))
def test_normalize_idempotent(tokens):
    words = [W("A", 0, t, float(i)) for i, t in enumerate(tokens)]
    once = normalize_words(words)
    assert normalize_words(once) == once
    assert all("[" not in w.text and "]" not in w.text and w.text == w.text.lower() for w in once)


# -- backchannel extraction and labeling ---------------------------------------

def test_extract_isolated_only():
    sess = session(
        W("A", 0, "so", 0.0), W("A", 0, "we", 0.3), W("A", 0, "went", 0.6),
        W("B", 0, "uh-huh", 0.4),
        W("B", 1, "yeah", 1.0), W("B", 1, "we", 1.3), W("B", 1, "did", 1.6), W("B", 1, "that", 1.9),
        W("A", 1, "oh", 2.5), W("A", 1, "okay", 2.7),
    )
    pruned, cands = extract_backchannel_candidates(sess, LEX)
    assert [(c.phrase, c.speaker, c.start) for c in cands] == [("uh-huh", "B", 0.4), ("oh okay", "A", 2.5)]
    assert cands[0].end == pytest.approx(0.6)
    assert "uh-huh" not in [w.text for w in pruned.words]
    assert [w.text for w in pruned.words if w.speaker == "B"] == ["yeah", "we", "did", "that"]


def test_turn_taking_at_speaker_change():
    sess = session(W("A", 0, "how", 0.0), W("A", 0, "are", 0.3), W("A", 0, "you", 0.6), W("B", 0, "good", 1.0))
    lab = serialize_and_label(sess, [])
    assert [(lw.word.text, lw.label) for lw in lab.words] == [
        ("how", TurnEvent.CONTINUING_SPEECH), ("are", TurnEvent.CONTINUING_SPEECH),
        ("you", TurnEvent.TURN_TAKING), ("good", TurnEvent.CONTINUING_SPEECH)]
    assert lab.n_speaker_changes == 1


def test_single_speaker_no_turns():
    sess = session(*(W("A", i // 3, f"w{i}", 0.5 * i) for i in range(9)))
    lab = serialize_and_label(sess, [])
    assert all(lw.label == TurnEvent.CONTINUING_SPEECH for lw in lab.words)


def _brute_anchor(stream, cand):
    best = None
    for i, w in enumerate(stream):
        if w.speaker != cand.speaker and w.start <= cand.start:
            if best is None or w.start >= stream[best].start:
                best = i
    return best


def test_backchannel_anchor_largest_start():
    sess = session(W("A", 0, "we", 3.0, 3.4), W("A", 0, "moved", 3.5, 3.9), W("A", 0, "there", 4.0, 4.3),
                   W("B", 0, "uh-huh", 3.2, 3.4), W("B", 1, "nice", 5.0), W("B", 1, "place", 5.3))
    pruned, cands = extract_backchannel_candidates(sess, LEX)
    lab = serialize_and_label(pruned, cands)
    stream = [w for s in pruned.sentences() for w in s]
    anchor = stream[_brute_anchor(stream, cands[0])]
    assert anchor.text == "we" and anchor.start == 3.0
    labels = {(lw.word.speaker, lw.word.text): lw.label for lw in lab.words}
    assert labels[("A", "we")] == TurnEvent.BACKCHANNEL
    assert labels[("A", "there")] == TurnEvent.TURN_TAKING
    # re-inserted right after its anchor
    assert [lw.word.text for lw in lab.words] == ["we", "uh-huh", "moved", "there", "nice", "place"]


def test_collision_turn_taking_wins():
    sess = session(W("A", 0, "that", 0.0), W("A", 0, "is", 0.3), W("A", 0, "it", 0.6, 1.0),
                   W("B", 0, "right", 0.7, 0.9), W("B", 1, "so", 1.5), W("B", 1, "anyway", 1.8))
    pruned, cands = extract_backchannel_candidates(sess, LEX)
    lab = serialize_and_label(pruned, cands)
    labels = {lw.word.text: lw.label for lw in lab.words}
    assert labels["it"] == TurnEvent.TURN_TAKING
    assert lab.n_collisions == 1


def test_candidate_without_anchor_dropped():
    sess = session(W("B", 0, "yeah", 0.0), W("A", 0, "hello", 1.0), W("A", 0, "there", 1.3))
    pruned, cands = extract_backchannel_candidates(sess, LEX)
    lab = serialize_and_label(pruned, cands)
    assert lab.n_dropped_candidates == 1
    assert [lw.word.text for lw in lab.words] == ["hello", "there"]


@st.composite
def dialogs(draw):
    """Alternating-turn sessions with random backchannels during the speaker's words."""
    n_sent = draw(st.integers(1, 8))
    words, t = [], 0.0
    sent_ids = {"A": 0, "B": 0}
    spk = draw(st.sampled_from("AB"))
    for _ in range(n_sent):
        other = "B" if spk == "A" else "A"
        n = draw(st.integers(3, 6))
        sid = sent_ids[spk]
        sent_ids[spk] += 1
        for j in range(n):
            words.append(AlignedWord(spk, sid, f"w{j}", t, t + 0.3))
            if draw(st.booleans()) and draw(st.booleans()):
                bid = sent_ids[other]
                sent_ids[other] += 1
                words.append(AlignedWord(other, bid, draw(st.sampled_from(["yeah", "uh-huh"])), t + 0.1, t + 0.25))
            t += 0.4
        if draw(st.booleans()):
            spk = other
        t += 0.5
    return DialogSession("h", words)


@settings(max_examples=60, deadline=None)
@given(dialogs())
def test_labeling_invariants(sess):
    pruned, cands = extract_backchannel_candidates(sess, LEX)
    lab = serialize_and_label(pruned, cands)
    stream = [w for s in pruned.sentences() for w in s]
    changes = sum(stream[i].speaker != stream[i + 1].speaker for i in range(len(stream) - 1))
    counts = Counter(lw.label for lw in lab.words)
    assert counts[TurnEvent.TURN_TAKING] == changes
    for c in cands:
        i = _brute_anchor(stream, c)
        if i is not None:
            assert stream[i].speaker != c.speaker
    for lw in lab.words:
        if lw.label == TurnEvent.BACKCHANNEL:
            assert any(_brute_anchor(stream, c) is not None and stream[_brute_anchor(stream, c)] == lw.word for c in cands)
    unanchored = [c for c in cands if _brute_anchor(stream, c) is None]
    assert lab.n_dropped_candidates == len(unanchored)
    assert len(lab.words) == len(sess.words) - sum(len(c.words) for c in unanchored)
    samples = build_samples("h", lab.words)
    assert len(samples) == len(lab.words)


# -- samples --------------------------------------------------------------------

def test_five_word_sentence_five_samples():
    sess = session(*(W("A", 0, t, 0.3 * i) for i, t in enumerate("one two three four five".split())),
                   W("B", 0, "ok", 3.0), W("B", 0, "then", 3.3))
    lab = serialize_and_label(sess, [])
    samples = build_samples("sess", lab.words)
    a = [s for s in samples if s.speaker == "A"]
    assert len(a) == 5
    for k, s in enumerate(a, 1):
        assert s.tokens == tuple("one two three four five".split()[:k])
        assert s.acoustic_ref == AcousticRef("sess", 0.0, 0.3 * (k - 1) + 0.2)
    assert a[-1].label == TurnEvent.TURN_TAKING
    assert [s.label for s in a[:-1]] == [TurnEvent.CONTINUING_SPEECH] * 4


def test_history_marks_relative():
    sess = session(W("B", 0, "right", 0.0), W("B", 0, "then", 0.2, 0.4),
                   W("A", 0, "we", 1.0), W("A", 0, "moved", 1.2, 1.4),
                   W("A", 1, "and", 2.0), W("A", 1, "then", 2.2, 2.4),
                   W("B", 1, "oh", 3.0), W("B", 1, "wow", 3.2, 3.4))
    samples = build_samples("sess", serialize_and_label(sess, []).words, history_len=2)
    target = next(s for s in samples if s.tokens == ("and", "then"))
    assert target.history == (("<spkOther>", "right then"), ("<spkSelf>", "we moved"))
    last = samples[-1]
    assert last.history == (("<spkOther>", "we moved"), ("<spkOther>", "and then"))
    assert samples[0].history == ()
    assert build_samples("sess", serialize_and_label(sess, []).words, history_len=0)[-1].history == ()


def test_sample_json_roundtrip(tmp_path):
    s = Sample("x:A:0:1", "x", "A", 0, ("a", "b"), AcousticRef("x", 0.0, 0.5),
               (("<spkOther>", "hi there"),), TurnEvent.BACKCHANNEL)
    write_samples([s], tmp_path / "s.jsonl")
    assert read_samples(tmp_path / "s.jsonl") == [s]
    assert json.loads((tmp_path / "s.jsonl").read_text())["label"] == 1


def test_session_file_roundtrip(tmp_path):
    sess = session(W("A", 0, "hi", 0.0), W("B", 0, "hello", 0.5), sid="abc")
    write_session(sess, tmp_path / "abc.jsonl")
    assert read_session(tmp_path / "abc.jsonl").words == sess.words
    assert read_session(tmp_path / "abc.jsonl").session_id == "abc"


def test_three_speakers_rejected():
    with pytest.raises(ValueError):
        session(W("A", 0, "a", 0), W("B", 0, "b", 1), W("C", 0, "c", 2))


# -- splits and downsampling ------------------------------------------------------

def _sizes(assign):
    c = Counter(assign.values())
    return c["train"], c["validation"], c["test"]


@pytest.mark.parametrize("n,expected", [(2438, (2000, 300, 138)), (24, (20, 3, 1)), (3, (1, 1, 1))])
def test_split_sizes(n, expected):
    assert _sizes(split_sessions([f"s{i}" for i in range(n)])) == expected


def test_split_contiguous_in_input_order():
    ids = [f"s{i}" for i in range(24)]
    assign = split_sessions(ids)
    assert [assign[i] for i in ids] == ["train"] * 20 + ["validation"] * 3 + ["test"]


def test_split_too_few():
    with pytest.raises(ValueError):
        split_sessions(["a", "b"])


@given(st.integers(3, 3000), st.tuples(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50)))
def test_split_partition(n, ratio):
    ids = [f"s{i}" for i in range(n)]
    a = split_sessions(ids, ratio)
    assert set(a) == set(ids) and a == split_sessions(ids, ratio)
    sizes = _sizes(a)
    assert sum(sizes) == n and min(sizes) >= 1
    for size, r in zip(sizes, ratio):
        assert abs(size - n * r / sum(ratio)) < 2 or size == 1


def _samples(n_c, n_b, n_t):
    labels = [0] * n_c + [1] * n_b + [2] * n_t
    return [Sample(f"x{i}", "x", "A", 0, ("w",), AcousticRef("x", 0, 1), (), TurnEvent(l))
            for i, l in enumerate(labels)]


def test_downsample_counts():
    out = downsample_continuing(_samples(100, 10, 20), rng_seed=0)
    c = Counter(s.label for s in out)
    assert (c[0], c[1], c[2]) == (15, 10, 20)


def test_downsample_noop_when_balanced():
    samples = _samples(15, 10, 20)
    assert downsample_continuing(samples, 3) == samples


def test_downsample_reference_counts():
    assert round_half_up((56000 + 86000) / 2) == 71000


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 80), st.integers(0, 30), st.integers(0, 30), st.integers(0, 10))
def test_downsample_invariants(n_c, n_b, n_t, seed):
    samples = _samples(n_c, n_b, n_t)
    out = downsample_continuing(samples, seed)
    c = Counter(s.label for s in out)
    assert c[1] == n_b and c[2] == n_t
    assert c[0] == min(n_c, round_half_up((n_b + n_t) / 2))
    order = {s.sample_id: i for i, s in enumerate(samples)}
    assert [order[s.sample_id] for s in out] == sorted(order[s.sample_id] for s in out)
    assert out == downsample_continuing(samples, seed)


# -- lexicon and whole pipeline ----------------------------------------------------

def test_data_driven_lexicon():
    sessions = [session(W("A", 0, "yeah", 0.0), W("A", 1, "oh", 1.0), W("A", 1, "okay", 1.2),
                        W("B", 0, "yeah", 2.0), W("B", 1, "long", 3.0), W("B", 1, "sentence", 3.2), W("B", 1, "here", 3.4))]
    lex = build_lexicon(sessions, size=1)
    assert lex.phrases == {"yeah"}
    assert build_lexicon(sessions, size=20).phrases == {"yeah", "oh okay"}


def test_lexicon_file_roundtrip(tmp_path):
    LEX.save(tmp_path / "lex.txt")
    assert BackchannelLexicon.load(tmp_path / "lex.txt") == LEX
    with pytest.raises(ValueError):
        BackchannelLexicon.from_phrases(["one two three"])


def test_prepare_corpus_downsamples_train_only_test_untouched():
    from turnfusion.synth import SynthConfig, generate, BACKCHANNEL_PHRASES

    ss = generate(SynthConfig(n_sessions=12, sentences_per_session=20, seed=3))
    prep = prepare_corpus([s.session for s in ss], lexicon=BackchannelLexicon.from_phrases(BACKCHANNEL_PHRASES))
    counts = prep.stats["counts"]
    full = prep.stats["full_counts"]
    tr = counts["train"]
    assert tr["continuing_speech"] == min(full["train"]["continuing_speech"],
                                          round_half_up((tr["backchannel"] + tr["turn_taking"]) / 2))
    assert counts["test"] == full["test"]
    assert stats_words(prep) == prep.stats["words"]


def stats_words(prep):
    return sum(sum(v.values()) for v in prep.stats["full_counts"].values())
