"""Square lattice of coupled cavities with periodic boundaries.

Sites are labelled ``(j, k)`` with ``1 <= j, k <= N`` and stored in row-major
order.  Momentum modes ``(m, n)`` use the same labels and ordering.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np


class Dispersion(str, enum.Enum):
    """Frequency assigned to momentum mode ``(m, n)``.

    ``SUMMED_PHASE`` is ``2 v cos(2 pi (m + n) / N)``.
    ``SEPARABLE`` is ``2 v [cos(2 pi m / N) + cos(2 pi n / N)]``, which is the
    exact spectrum of nearest-neighbour hopping on the periodic lattice.
    """

    SUMMED_PHASE = "summed_phase"
    SEPARABLE = "separable"


class SiteIndex(NamedTuple):
    j: int
    k: int

    def __str__(self) -> str:
        return f"({self.j},{self.k})"


@dataclass(frozen=True)
class LatticeSpec:
    N: int
    v: float
    dispersion: Dispersion = Dispersion.SUMMED_PHASE

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise ValueError(f"lattice size N must be a positive integer, got {self.N!r}")
        if not np.isfinite(self.v):
            raise ValueError(f"hopping rate v must be finite, got {self.v!r}")
        object.__setattr__(self, "dispersion", Dispersion(self.dispersion))

    @property
    def n_sites(self) -> int:
        return self.N * self.N

    def sites(self) -> Iterator[SiteIndex]:
        for j in range(1, self.N + 1):
            for k in range(1, self.N + 1):
                yield SiteIndex(j, k)

    def neighbours(self, site: SiteIndex) -> tuple[SiteIndex, SiteIndex]:
        """Forward neighbours ``(j+1, k)`` and ``(j, k+1)`` with periodic wrap."""
        j, k = site
        return SiteIndex(j % self.N + 1, k), SiteIndex(j, k % self.N + 1)


@dataclass(frozen=True)
class MomentumMode:
    m: int
    n: int
    omega: float


def site_index(site, spec: LatticeSpec) -> int:
    """Row-major linear index ``(j - 1) N + (k - 1)``."""
    j, k = site
    if not (1 <= j <= spec.N and 1 <= k <= spec.N):
        raise IndexError(f"site {tuple(site)} outside {spec.N}x{spec.N} lattice")
    return (j - 1) * spec.N + (k - 1)


def site_from_index(index: int, spec: LatticeSpec) -> SiteIndex:
    if not 0 <= index < spec.n_sites:
        raise IndexError(f"linear index {index} outside [0, {spec.n_sites - 1}]")
    j, k = divmod(index, spec.N)
    return SiteIndex(j + 1, k + 1)


def mode_frequency(m: int, n: int, spec: LatticeSpec, dispersion: Dispersion | str | None = None) -> float:
    dispersion = Dispersion(dispersion or spec.dispersion)
    a = 2 * np.pi * m / spec.N
    b = 2 * np.pi * n / spec.N
    if dispersion is Dispersion.SUMMED_PHASE:
        return 2 * spec.v * np.cos(a + b)
    return 2 * spec.v * (np.cos(a) + np.cos(b))


def momentum_modes(spec: LatticeSpec, dispersion: Dispersion | str | None = None) -> list[MomentumMode]:
    """All N^2 modes ordered lexicographically in ``(m, n)``."""
    return [
        MomentumMode(m, n, float(mode_frequency(m, n, spec, dispersion)))
        for m, n in spec.sites()
    ]


def mode_frequencies(spec: LatticeSpec, dispersion: Dispersion | str | None = None) -> np.ndarray:
    return np.array([mode.omega for mode in momentum_modes(spec, dispersion)])


def fourier_matrix(spec: LatticeSpec) -> np.ndarray:
    """``U[site, mode] = exp[-i(2 pi j m / N + 2 pi k n / N)] / N``.

    Local annihilators are ``a_site = sum_mode U[site, mode] c_mode``.
    """
    N = spec.N
    labels = np.arange(1, N + 1)
    jj, kk = np.meshgrid(labels, labels, indexing="ij")
    j = jj.ravel()[:, None]
    k = kk.ravel()[:, None]
    m = jj.ravel()[None, :]
    n = kk.ravel()[None, :]
    return np.exp(-2j * np.pi * (j * m + k * n) / N) / N


def hopping_matrix(spec: LatticeSpec) -> np.ndarray:
    """Single-photon hopping matrix ``h`` with ``H_hop = sum_ab h[a, b] a_a^+ a_b``.

    Every forward bond contributes ``v`` in both directions, so bonds that wrap
    onto the same pair of sites (N = 2) or onto a single site (N = 1) add up.
    """
    h = np.zeros((spec.n_sites, spec.n_sites))
    for site in spec.sites():
        a = site_index(site, spec)
        for nb in spec.neighbours(site):
            b = site_index(nb, spec)
            h[a, b] += spec.v
            h[b, a] += spec.v
    return h
