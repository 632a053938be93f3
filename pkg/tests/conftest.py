import os

import hypothesis
import pytest

from hlsdse import designs
from hlsdse.space import build_space, prune

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=1000, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def vector_mul():
    return designs.load("vector_mul")


@pytest.fixture(scope="session")
def gemm():
    return designs.load("gemm")


@pytest.fixture(scope="session")
def gemm_poly():
    return designs.load("gemm_poly")


@pytest.fixture(scope="session")
def vm_space(vector_mul):
    return prune(build_space(vector_mul), vector_mul)
