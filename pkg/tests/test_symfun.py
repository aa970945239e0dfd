import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvquot.symfun import (
    OrderedSpectrum,
    Spectrum,
    deletion_residual,
    identity_residuals,
    identity_residuals_batch,
    sigma,
    sigma_minor,
    sigma_minor2,
)
from oracles import sigma_abs_brute, sigma_brute


def test_sigma_examples():
    assert sigma(0, (5, -2, 7)) == 1
    assert sigma(3, (1, 1, 1)) == 1
    assert sigma_brute(2, (1, 2, 3)) == 11
    assert sigma(2, (1, 2, 3)) == 11


def test_sigma_out_of_range_is_zero():
    assert sigma(-1, (1, 2)) == 0
    assert sigma(3, (1, 2)) == 0


def test_minor_examples():
    assert sigma_brute(2, (2, 3)) == 6
    assert sigma_minor(2, (1, 2, 3), 0) == 6
    assert sigma_minor(0, (4, -1, 9), 1) == 1
    assert sigma_minor(1, (1, 1, 1), 2) == 2
    assert sigma_minor2(1, (1, 2, 3), 0, 1) == 3
    assert sigma_minor2(0, (1, 2, 3), 1, 2) == 1
    assert sigma_brute(2, (3, 2)) == 6
    assert sigma_minor2(2, (4, 3, 2, 1), 0, 3) == 6
    assert sigma_minor2(2, (4, 3, 2, 1), 3, 0) == 6


def test_argument_errors():
    with pytest.raises(IndexError):
        sigma_minor(1, (1, 2, 3), 3)
    with pytest.raises(ValueError):
        sigma_minor2(1, (1, 2, 3), 1, 1)
    with pytest.raises(ValueError):
        sigma(1, (1.0, float("nan")))
    with pytest.raises(ValueError):
        identity_residuals(3, (1, 2, 3))


def test_identity_examples():
    assert max(identity_residuals(2, (1, 2, 3))) == 0
    t = 1.7
    assert max(identity_residuals(1, (t, t, t))) < 1e-15
    assert max(identity_residuals(1, (1, 0, 0))) == 0


def test_spectrum_types():
    assert Spectrum((1, 2)).n == 2
    OrderedSpectrum((3, 2, 1))
    with pytest.raises(ValueError):
        OrderedSpectrum((1, 2, 3))
    with pytest.raises(ValueError):
        OrderedSpectrum((3, 2, 0))
    OrderedSpectrum((3, 2, 0), convex=False)
    assert OrderedSpectrum.from_unsorted((1, 3, 2)).values.tolist() == [3, 2, 1]
    with pytest.raises(ValueError):
        Spectrum((1.0,))


def test_against_enumeration_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(400):
        n = int(rng.integers(1, 9))
        lam = rng.uniform(-10, 10, n)
        for k in range(n + 1):
            ref = sigma_brute(k, lam)
            # relative to sigma_k(|lam|): sigma_k itself can cancel to ~0
            worst = max(worst, abs(sigma(k, lam) - ref) / sigma_abs_brute(k, lam))
    assert worst <= 1e-12


spectra = st.integers(2, 8).flatmap(
    lambda n: st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n))


@given(spectra, st.randoms(use_true_random=False))
@settings(max_examples=200, deadline=None)
def test_permutation_invariance(lam, rnd):
    perm = list(lam)
    rnd.shuffle(perm)
    for k in range(len(lam) + 1):
        a, b = sigma(k, lam), sigma(k, perm)
        assert abs(a - b) <= 1e-14 * max(sigma_abs_brute(k, lam), 1e-300)


@given(spectra)
@settings(max_examples=200, deadline=None)
def test_deletion_consistency(lam):
    for k in range(1, len(lam) + 1):
        assert deletion_residual(k, lam) <= 1e-12


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_identity_batch_positive_cone(n):
    rng = np.random.default_rng(n)
    lam = 10 ** rng.uniform(-3, 3, (20000, n))
    for k in range(1, n):
        assert identity_residuals_batch(k, lam).max() <= 1e-10


def test_backends_agree(kernel_module):
    rng = np.random.default_rng(3)
    lam = rng.uniform(-5, 5, (500, 6))
    e = kernel_module.esp_table(lam)
    for row in range(0, 500, 50):
        for k in range(7):
            assert e[row, k] == pytest.approx(sigma_brute(k, lam[row]), rel=1e-11, abs=1e-9)
    d1 = kernel_module.esp_deleted(lam)
    d2 = kernel_module.esp_deleted2(lam)
    r = 17
    for i in range(6):
        for j in range(5):
            assert d1[r, i, j] == pytest.approx(sigma_brute(j, np.delete(lam[r], i)), rel=1e-11, abs=1e-9)
    assert d2[r, 1, 4, 2] == pytest.approx(sigma_brute(2, np.delete(lam[r], (1, 4))), rel=1e-11, abs=1e-9)
    assert np.all(d2[:, 2, 2, :] == 0)
