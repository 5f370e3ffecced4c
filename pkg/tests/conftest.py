import pytest
import torch

torch.set_num_threads(1)

_criteria: dict[tuple[int, str], str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if rep.failed:
        _criteria[key] = "FAIL"
    elif rep.when == "call":
        _criteria.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (n, desc), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"[{status}] criterion {n}: {desc}")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small generated corpus on disk plus its prepared splits."""
    from turnfusion.corpus import BackchannelLexicon, prepare_corpus, read_corpus
    from turnfusion.features import FeatureStore
    from turnfusion.synth import SynthConfig, write_corpus

    root = tmp_path_factory.mktemp("corpus")
    write_corpus(SynthConfig(n_sessions=12, sentences_per_session=12, vocab_size=40, frame_dim=6), root)
    prepared = prepare_corpus(read_corpus(root / "sessions"), lexicon=BackchannelLexicon.load(root / "lexicon.txt"),
                              ratio=(8, 2, 2))
    return root, prepared, FeatureStore(root / "features")
