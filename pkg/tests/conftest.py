import numpy as np
import pytest
from hypothesis import settings

from fairleak.graph import Graph, SbmParams, adjacency_from_edges, generate_sbm

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_graph(n, edges, labels=None, features=None, train=None, num_classes=2):
    """Small hand-built graph; every labelled node trains unless ``train`` is given."""
    labels = np.zeros(n, np.int64) if labels is None else np.asarray(labels)
    features = np.eye(n) if features is None else np.asarray(features, dtype=float)
    train = np.arange(n) if train is None else np.asarray(train)
    return Graph(adjacency_from_edges(n, edges), features, labels, train,
                 np.zeros(0, np.int64), np.zeros(0, np.int64), num_classes)


def path_graph(n=3):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture
def sbm20():
    return generate_sbm(SbmParams(20, 0.4, 0.1), seed=3)


@pytest.fixture
def sbm60():
    return generate_sbm(SbmParams(60, 0.3, 0.05), seed=0)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
