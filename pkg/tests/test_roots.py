import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimentropy.roots import polynomial_preimages


def test_roots_of_unity():
    r = polynomial_preimages([1, 0, 0, 0, 0, 0, 0, 0, 0], [1.0])[0]
    expected = np.exp(2j * np.pi * np.arange(8) / 8)
    assert np.allclose(np.sort_complex(r), np.sort_complex(expected), atol=1e-10)


def test_warm_start_agrees():
    coeffs = [1, 0, -1.4]
    t = np.array([0.3 + 0.2j, -0.7j])
    cold = polynomial_preimages(coeffs, t)
    warm = polynomial_preimages(coeffs, t + 1e-3, initial=cold)
    for row, target in zip(warm, t + 1e-3):
        assert np.allclose(np.polyval(coeffs, row), target, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), min_size=2, max_size=5),
    st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
)
def test_every_root_solves(lower, target):
    coeffs = [1.0] + lower
    r = polynomial_preimages(coeffs, [target])[0]
    assert r.shape == (len(lower),)
    scale = 1 + np.max(np.abs(r)) ** len(lower)
    assert np.all(np.abs(np.polyval(coeffs, r) - target) <= 1e-7 * scale)
