import numpy as np
import pytest


class LayerLoss:
    """MSE on a single layer's output, in the shape gradcheck expects."""

    def __init__(self, layer):
        self.layer = layer

    @property
    def params(self):
        return self.layer.params

    def loss_and_grads(self, batch):
        x, y = batch
        self.layer.zero_grads()
        out = self.layer.forward(x)
        diff = out - y
        self.layer.backward(2.0 * diff / diff.size)
        return float(np.mean(diff * diff)), self.layer.grads


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    def record(line):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
