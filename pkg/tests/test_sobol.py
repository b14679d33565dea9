import numpy as np
import pytest
from scipy.stats import qmc

from ppinn.sobol import sobol_sequence


def test_first_points():
    assert sobol_sequence(1, 3)[:, 0].tolist() == [0.5, 0.75, 0.25]
    assert sobol_sequence(2, 1)[0].tolist() == [0.5, 0.5]


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_matches_reference_generator(dim):
    ref = qmc.Sobol(d=dim, scramble=False).random_base2(10)[1:]
    assert np.array_equal(sobol_sequence(dim, len(ref)), ref)


@pytest.mark.parametrize("k", [1, 3, 6, 9])
def test_dyadic_stratification(k):
    # the 2^k-point prefix of the full sequence (origin included) puts one point per dyadic cell per axis
    pts = np.vstack([np.zeros((1, 3)), sobol_sequence(3, 2**k - 1)])
    for axis in range(3):
        cells = np.floor(pts[:, axis] * 2**k).astype(int)
        assert sorted(cells) == list(range(2**k))


def test_deterministic_and_range():
    a, b = sobol_sequence(3, 100), sobol_sequence(3, 100)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 1


@pytest.mark.parametrize("dim", [0, 4])
def test_dimension_out_of_range(dim):
    with pytest.raises(ValueError):
        sobol_sequence(dim, 4)
