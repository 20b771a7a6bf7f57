import numpy as np
import pytest

from zfrac.imagio import write_pgm


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pgm_path(tmp_path):
    """Write a uint8 array as a P5 PGM and return its path."""

    def _write(img, name="img.pgm"):
        path = tmp_path / name
        write_pgm(path, img)
        return str(path)

    return _write
