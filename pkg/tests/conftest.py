import sys

import numpy as np
import pytest

from moreaugrad.fileio import load_tensor
from moreaugrad.model import FunctionModel, build_model, load_weights, train_toy
from moreaugrad.numerics import make_rng
from oracles import DATA, wavy_fn, wavy_grad


@pytest.fixture(scope="session")
def conv_model():
    return load_weights(DATA / "conv_fixture.mgw")


@pytest.fixture(scope="session")
def conv_inputs(conv_model):
    """Held-out blob-bar inputs the fixture classifies correctly, with their classes."""
    x = load_tensor(DATA / "conv_inputs.mgt")
    return x, np.asarray(conv_model.predict(x))


@pytest.fixture(scope="session")
def mlp_model():
    return train_toy("two-gaussians", "mlp", make_rng(3))


@pytest.fixture(scope="session")
def random_conv():
    return build_model("conv", (1, 8, 8), 2, make_rng(11), input_rms=0.125)


@pytest.fixture
def wavy_model():
    return FunctionModel(wavy_fn, wavy_grad, (2,), name="wavy")


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.RESULTS:
        terminalreporter.write_line(line)
