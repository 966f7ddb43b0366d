import numpy as np
import pytest

from gridcascade import netgen


@pytest.fixture
def tri():
    return netgen.triangle()


@pytest.fixture
def vee():
    return netgen.vee()


@pytest.fixture
def bowtie():
    return netgen.bowtie()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
