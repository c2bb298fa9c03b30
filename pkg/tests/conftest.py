import os
import sys

# Single-threaded BLAS keeps reductions in a fixed order, which the
# bitwise-reproducibility tests rely on. Must be set before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

sys.path.insert(0, os.path.dirname(__file__))

import pytest


def _has_idx_files(path):
    from lrnet.data import MNIST_FILES

    return path and all(
        os.path.exists(os.path.join(path, name))
        or os.path.exists(os.path.join(path, name + ".gz"))
        for name in MNIST_FILES.values()
    )


@pytest.fixture(scope="session")
def digits_dir():
    """Directory with the IDX digit files.

    Prefers a real dataset pointed at by LRNET_DATA_DIR; otherwise builds
    the deterministic synthetic stand-in once per checkout and caches it.
    """
    env = os.environ.get("LRNET_DATA_DIR")
    if _has_idx_files(env):
        return env
    from synth_data import ensure_dataset

    return ensure_dataset()
