import numpy as np
import pytest

from dsdg import data


@pytest.fixture(scope="session")
def toy_corpus():
    return data.synth_toy_dataset(8, ["print", "replay"], 32, seed=7)


@pytest.fixture()
def tiny_corpus():
    return data.synth_toy_dataset(2, ["print", "replay"], 32, seed=1)


def write_tiny_corpus(tmp_path, n_identities=2, spoof_types=("print",), size=32, seed=1):
    pairs = data.synth_toy_dataset(n_identities, list(spoof_types), size, seed=seed)
    return data.write_corpus(pairs, tmp_path), pairs


@pytest.fixture()
def disk_corpus(tmp_path):
    manifest, pairs = write_tiny_corpus(tmp_path)
    return manifest, pairs
