import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_array.lattice import (Dispersion, LatticeSpec, SiteIndex, fourier_matrix, hopping_matrix,
                                  mode_frequencies, momentum_modes, site_from_index, site_index)


def test_rejects_bad_sizes():
    with pytest.raises(ValueError):
        LatticeSpec(0, 1.0)
    with pytest.raises(ValueError):
        LatticeSpec(2, float("nan"))


def test_site_index_round_trip():
    spec = LatticeSpec(3, 1.0)
    for i, site in enumerate(spec.sites()):
        assert site_index(site, spec) == i
        assert site_from_index(i, spec) == site
    with pytest.raises(IndexError):
        site_index((4, 1), spec)
    with pytest.raises(IndexError):
        site_from_index(9, spec)


def test_neighbours_wrap():
    spec = LatticeSpec(4, 1.0)
    assert spec.neighbours(SiteIndex(4, 2)) == (SiteIndex(1, 2), SiteIndex(4, 3))
    assert spec.neighbours(SiteIndex(1, 4)) == (SiteIndex(2, 4), SiteIndex(1, 1))


def test_benchmark_mode_frequencies():
    spec = LatticeSpec(4, 1.5)
    summed = {(m.m, m.n): m.omega for m in momentum_modes(spec, Dispersion.SUMMED_PHASE)}
    assert summed[(1, 1)] == pytest.approx(-3.0)
    assert summed[(1, 2)] == pytest.approx(0.0, abs=1e-12)
    assert summed[(4, 4)] == pytest.approx(3.0)
    sep = mode_frequencies(spec, Dispersion.SEPARABLE)
    assert sep.max() == pytest.approx(6.0)
    assert np.sum(np.abs(sep) < 1e-12) == 6


def test_single_site_degenerates():
    spec = LatticeSpec(1, 0.7)
    np.testing.assert_allclose(fourier_matrix(spec), [[1.0]])
    np.testing.assert_allclose(hopping_matrix(spec), [[4 * 0.7]])
    assert mode_frequencies(spec, "separable")[0] == pytest.approx(4 * 0.7)


@given(st.integers(1, 7))
def test_fourier_matrix_unitary(N):
    U = fourier_matrix(LatticeSpec(N, 1.0))
    assert np.max(np.abs(U.conj().T @ U - np.eye(N * N))) <= 1e-12


@settings(max_examples=30)
@given(st.integers(3, 6), st.floats(-3, 3, allow_nan=False))
def test_fourier_diagonalizes_hopping_with_separable_dispersion(N, v):
    spec = LatticeSpec(N, v)
    U = fourier_matrix(spec)
    h_modes = U.conj().T @ hopping_matrix(spec) @ U
    np.testing.assert_allclose(h_modes, np.diag(mode_frequencies(spec, Dispersion.SEPARABLE)), atol=1e-12)


def test_hopping_spectrum_matches_separable_by_eigendecomposition():
    spec = LatticeSpec(4, 1.5)
    eig = np.linalg.eigvalsh(hopping_matrix(spec))
    np.testing.assert_allclose(eig, np.sort(mode_frequencies(spec, Dispersion.SEPARABLE)), atol=1e-12)
    # the summed-phase dispersion is not the hopping spectrum
    assert not np.allclose(eig, np.sort(mode_frequencies(spec, Dispersion.SUMMED_PHASE)))


def test_two_site_ring_doubles_bond():
    h = hopping_matrix(LatticeSpec(2, 1.0))
    # (1,1) couples to (2,1) through both the forward and the wrapped bond
    assert h[0, 2] == 2.0 and h[0, 1] == 2.0 and h[0, 3] == 0.0
