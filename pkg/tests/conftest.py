import numpy as np
import pytest

from eventcausal.examples import GRAPHS


@pytest.fixture(params=sorted(GRAPHS))
def example_graph(request):
    return GRAPHS[request.param]()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
