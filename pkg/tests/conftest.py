"""Shared fixtures: a small trained model on the separable toy corpus."""

import copy

import pytest

from stitchguard import model as mdl, pipeline as pl, toy
from stitchguard.features import FeatureConfig

TOY_FEATURES = FeatureConfig(kind="lfcc", dim=20, nfft=1024)


def labeled(corpus, cfg=TOY_FEATURES):
    return [pl.LabeledFeatures(u, pl.utterance_features(c, cfg), lab) for u, c, lab in corpus]


@pytest.fixture(scope="session")
def toy_run():
    """Train the narrow attention model once on 40 toy utterances, holding
    out 20 segments for validation."""
    train_utts = labeled(toy.make_corpus(40, seed=11))
    cfg = pl.TrainConfig(epochs=10, batch_size=16, validation_segments=20, seed=0)
    result = pl.train_features(train_utts, cfg, mdl.build(mdl.desk_config("MH"), seed=0))
    return train_utts, cfg, result


@pytest.fixture
def toy_model(toy_run):
    return copy.deepcopy(toy_run[2].model)


# one line per acceptance criterion, repeated at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
