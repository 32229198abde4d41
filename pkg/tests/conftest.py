import numpy as np
import pytest

from mtgn.config import TrainConfig
from mtgn.data import EventStream, batch_by_timestep


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_stream():
    """Five nodes, three timestamps."""
    ev = np.array([[0, 1, 0], [2, 3, 0], [1, 2, 2], [3, 4, 2], [0, 4, 3], [1, 3, 3], [2, 4, 3]])
    return EventStream.from_array(ev, node_count=5)


@pytest.fixture
def toy_steps(toy_stream):
    return batch_by_timestep(toy_stream)


@pytest.fixture
def tiny_config():
    return TrainConfig(embed_dim=4, gnn_layers=1, mixture_k=2, mc_samples=3, max_epochs=3)


@pytest.fixture
def hypertext_like(tmp_path):
    """Edge list in the HYPERTEXT layout: raw integer ids, 20-second stamps, 113 distinct nodes."""
    gen = np.random.default_rng(7)
    ids = gen.choice(np.arange(1000, 3000), size=113, replace=False)
    lines = ["# source target timestamp"]
    t = 140000
    # every node appears at least once, then random contacts
    order = gen.permutation(113)
    for a, b in zip(order[::2], order[1::2]):
        lines.append(f"{ids[a]} {ids[b]} {t}")
        t += 20 * int(gen.integers(0, 3))
    lines.append(f"{ids[order[-1]]} {ids[order[0]]} {t}")
    for _ in range(400):
        a, b = gen.choice(113, size=2, replace=False)
        t += 20 * int(gen.integers(0, 4))
        lines.append(f"{ids[a]} {ids[b]} {t}")
    path = tmp_path / "ht09_contact_list.dat"
    path.write_text("\n".join(lines) + "\n")
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
