import os
from pathlib import Path

import numpy as np
import pytest

from attreval import nn
from attreval.data import SyntheticSpec, default_mnist_path, generate_synthetic, load_mnist


def mnist_available() -> bool:
    return (Path(default_mnist_path()) / "train-images-idx3-ubyte").exists()


needs_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST IDX files not found; set MNIST_DIR")


@pytest.fixture(scope="session")
def planted():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def planted_net(planted):
    train, _ = planted
    net = nn.mlp(train.sample_shape[0], (64,), train.num_classes, seed=0)
    net, _ = nn.train(net, train, nn.TrainConfig(epochs=30, optimizer=nn.SGD(0.05)))
    return net


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip("MNIST IDX files not found")
    return load_mnist(default_mnist_path())


@pytest.fixture(scope="session")
def mnist_mlp(mnist, tmp_path_factory):
    """784-256-10 MLP trained with the default 30-epoch SGD setting; cached on disk across sessions."""
    cache = Path(os.environ.get("ATTREVAL_CACHE", Path.home() / ".cache" / "attreval"))
    path = cache / "mnist_mlp_seed0.aevnet"
    train, _ = mnist
    if path.exists():
        try:
            return nn.read_network(path)
        except nn.CheckpointError:
            pass
    net = nn.mlp(784, (256,), 10, seed=0)
    net, _ = nn.train(net, train, nn.TrainConfig(epochs=30, optimizer=nn.SGD(0.01), batch_size=64))
    cache.mkdir(parents=True, exist_ok=True)
    nn.save_network(net, path)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ----------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
