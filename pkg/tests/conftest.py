import os

# the runtime budgets in the acceptance suite assume single-threaded BLAS;
# at these matrix sizes extra threads only add overhead anyway
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from geomatch import dataset


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Small full toy dataset shared by read-only tests."""
    out = tmp_path_factory.mktemp("toyset")
    manifest = dataset.generate_toy_dataset(seed=11, out_dir=out, s_o=64, s_g=64)
    return manifest


@pytest.fixture(scope="session")
def pincer():
    return dataset.build_pincer(s_g=64, seed=3)


@pytest.fixture(scope="session")
def claw():
    return dataset.build_claw(s_g=64, seed=4)


@pytest.fixture()
def rng_np():
    return np.random.default_rng(12345)
