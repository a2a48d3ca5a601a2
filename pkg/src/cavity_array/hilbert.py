"""Basis enumeration, state vectors and ladder-operator matrices.

A basis state holds one level per atom and one occupation per boson mode.
Boson modes are either local cavities or momentum modes, tagged on the basis.
Operators are assembled element by element into ``scipy.sparse`` CSR
matrices, so composite terms (e.g. ``a_s |e><g|_s``) never pass through
intermediate states that the basis does not contain.
"""
from __future__ import annotations

import enum
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeSpec, site_index


class AtomLevel(enum.IntEnum):
    G = 0
    F = 1
    E = 2

    @property
    def weight(self) -> int:
        return 0 if self is AtomLevel.G else 1

    @classmethod
    def parse(cls, value) -> "AtomLevel":
        if isinstance(value, AtomLevel):
            return value
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(value)


class PhotonRep(str, enum.Enum):
    LOCAL = "local"
    MOMENTUM = "momentum"


@dataclass(frozen=True, order=True)
class BasisState:
    atoms: tuple[AtomLevel, ...]
    photons: tuple[int, ...]

    def __str__(self) -> str:
        atoms = "".join(level.name.lower() for level in self.atoms)
        return f"|{atoms}; {','.join(map(str, self.photons))}>"


@dataclass(frozen=True)
class SectorSpec:
    """Which states enter the basis.

    ``total_excitation=None`` means no excitation constraint.  ``levels`` lists
    the atomic levels allowed at every site; an atoms-only qubit basis is
    ``levels=(G, F)`` with ``photon_cap=0``.
    """

    total_excitation: int | None = 1
    photon_cap: int = 1
    representation: PhotonRep = PhotonRep.LOCAL
    levels: tuple[AtomLevel, ...] = (AtomLevel.G, AtomLevel.F, AtomLevel.E)

    def __post_init__(self):
        if self.total_excitation is not None and self.total_excitation < 0:
            raise ValueError(f"total_excitation must be >= 0, got {self.total_excitation}")
        if self.photon_cap < 0:
            raise ValueError(f"photon_cap must be >= 0, got {self.photon_cap}")
        object.__setattr__(self, "representation", PhotonRep(self.representation))
        levels = tuple(sorted({AtomLevel.parse(level) for level in self.levels}))
        if AtomLevel.G not in levels:
            raise ValueError("the ground level G must be allowed")
        object.__setattr__(self, "levels", levels)


class Basis:
    """Ordered, immutable list of basis states with a reverse index.

    ``dropped`` counts matrix elements discarded during operator assembly,
    keyed by reason (``"cap"`` for creation above the photon cap, ``"sector"``
    for targets outside the basis).  It is the only mutable attribute.
    """

    def __init__(self, spec: LatticeSpec, sector: SectorSpec, states: Sequence[BasisState]):
        self.spec = spec
        self.sector = sector
        self.states = tuple(states)
        self._index = {state: i for i, state in enumerate(self.states)}
        if len(self._index) != len(self.states):
            raise ValueError("duplicate basis states")
        self.dropped: Counter = Counter()

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def representation(self) -> PhotonRep:
        return self.sector.representation

    @property
    def n_modes(self) -> int:
        return self.spec.n_sites

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Basis):
            return NotImplemented
        return (self.spec == other.spec and self.sector == other.sector
                and self.states == other.states)

    def __hash__(self) -> int:
        return hash((self.spec, self.sector, self.dim))

    def __repr__(self) -> str:
        return (f"Basis(N={self.spec.N}, dim={self.dim}, "
                f"excitation={self.sector.total_excitation}, cap={self.sector.photon_cap}, "
                f"{self.representation.value})")

    def index(self, state: BasisState) -> int:
        return self._index[state]

    def find(self, state: BasisState) -> int | None:
        return self._index.get(state)

    def state(self, atoms: dict | None = None, photons: dict | None = None) -> BasisState:
        """Build a basis state from sparse ``{site: level}`` / ``{mode: n}`` maps.

        Sites may be ``(j, k)`` pairs or linear indices; unspecified atoms are G
        and unspecified modes are empty.
        """
        levels = [AtomLevel.G] * self.spec.n_sites
        for site, level in (atoms or {}).items():
            levels[self._linear(site)] = AtomLevel.parse(level)
        occ = [0] * self.n_modes
        for mode, n in (photons or {}).items():
            occ[self._linear(mode)] = int(n)
        return BasisState(tuple(levels), tuple(occ))

    def vector(self, atoms: dict | None = None, photons: dict | None = None) -> "StateVector":
        state = self.state(atoms, photons)
        i = self.find(state)
        if i is None:
            raise ValueError(f"state {state} is not in {self!r}")
        amps = np.zeros(self.dim, dtype=complex)
        amps[i] = 1.0
        return StateVector(amps, self)

    def level_mask(self, site, level) -> np.ndarray:
        s = self._linear(site)
        level = AtomLevel.parse(level)
        return np.array([state.atoms[s] == level for state in self.states])

    def photon_numbers(self) -> np.ndarray:
        return np.array([sum(state.photons) for state in self.states])

    def excitation_numbers(self) -> np.ndarray:
        return np.array([excitation_number(state) for state in self.states])

    def _linear(self, site) -> int:
        if isinstance(site, (int, np.integer)):
            if not 0 <= site < self.spec.n_sites:
                raise IndexError(f"index {site} out of range")
            return int(site)
        return site_index(site, self.spec)


def excitation_number(state: BasisState) -> int:
    """Atomic weight (F and E count one) plus total photon number."""
    return sum(level.weight for level in state.atoms) + sum(state.photons)


def _compositions(total: int, slots: int, cap: int):
    """Occupation tuples of ``slots`` modes summing to ``total``, each <= cap."""
    if slots == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(total, cap), -1, -1):
        rest = total - first
        if rest > cap * (slots - 1):
            continue
        for tail in _compositions(rest, slots - 1, cap):
            yield (first,) + tail


def _atom_configs(n_sites: int, levels: tuple[AtomLevel, ...], budget: int):
    excited = [level for level in levels if level is not AtomLevel.G]
    for count in range(min(budget, n_sites) + 1):
        for where in itertools.combinations(range(n_sites), count):
            for which in itertools.product(excited, repeat=count):
                atoms = [AtomLevel.G] * n_sites
                for s, level in zip(where, which):
                    atoms[s] = level
                yield tuple(atoms)


def enumerate_basis(spec: LatticeSpec, sector: SectorSpec | None = None) -> Basis:
    """All states of the sector, sorted by atom configuration then photons."""
    sector = sector or SectorSpec()
    M = spec.n_sites
    states = []
    if sector.total_excitation is None:
        for atoms in itertools.product(sector.levels, repeat=M):
            for photons in itertools.product(range(sector.photon_cap + 1), repeat=M):
                states.append(BasisState(tuple(atoms), photons))
    else:
        K = sector.total_excitation
        for atoms in _atom_configs(M, sector.levels, K):
            weight = sum(level.weight for level in atoms)
            for photons in _compositions(K - weight, M, sector.photon_cap):
                states.append(BasisState(atoms, photons))
    states.sort(key=lambda s: (tuple(int(a) for a in s.atoms), s.photons))
    return Basis(spec, sector, states)


# A ladder step is ("create" | "annihilate" | "number", mode).  Steps apply
# right to left, i.e. the last entry acts first, as in the written product.
LadderStep = tuple[str, int]


def build_term(basis: Basis, atom_changes: dict | None = None,
               boson_steps: Sequence[LadderStep] = (), coefficient: complex = 1.0) -> sp.csr_matrix:
    """Matrix of ``coefficient * (prod of |to><from| per site) * (boson product)``.

    ``atom_changes`` maps a site to ``(from_level, to_level)``.
    """
    changes = [(basis._linear(site), AtomLevel.parse(a), AtomLevel.parse(b))
               for site, (a, b) in (atom_changes or {}).items()]
    cap = basis.sector.photon_cap
    rows, cols, vals = [], [], []
    for col, state in enumerate(basis.states):
        atoms = list(state.atoms)
        if any(atoms[s] != src for s, src, _ in changes):
            continue
        for s, _, dst in changes:
            atoms[s] = dst
        photons = list(state.photons)
        amp = coefficient
        for kind, mode in reversed(boson_steps):
            n = photons[mode]
            if kind == "annihilate":
                if n == 0:
                    amp = 0
                    break
                amp *= np.sqrt(n)
                photons[mode] = n - 1
            elif kind == "create":
                if n + 1 > cap:
                    basis.dropped["cap"] += 1
                    amp = 0
                    break
                amp *= np.sqrt(n + 1)
                photons[mode] = n + 1
            elif kind == "number":
                amp *= n
            else:
                raise ValueError(f"unknown ladder step {kind!r}")
            if amp == 0:
                break
        if amp == 0:
            continue
        row = basis.find(BasisState(tuple(atoms), tuple(photons)))
        if row is None:
            basis.dropped["sector"] += 1
            continue
        rows.append(row)
        cols.append(col)
        vals.append(amp)
    return sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)),
                         shape=(basis.dim, basis.dim))


def build_transition_operator(basis: Basis, site, from_level, to_level) -> sp.csr_matrix:
    """``|to><from|`` on one atom; out-of-basis targets are dropped and counted."""
    return build_term(basis, {site: (from_level, to_level)})


def build_boson_operator(basis: Basis, mode, kind: str) -> sp.csr_matrix:
    """``kind`` is ``"annihilate"``, ``"create"`` or ``"number"``."""
    try:
        m = basis._linear(mode)
    except (IndexError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid mode index {mode!r}") from exc
    if kind not in ("annihilate", "create", "number"):
        raise ValueError(f"unknown boson operator kind {kind!r}")
    return build_term(basis, boson_steps=[(kind, m)])


def max_norm(a) -> float:
    """Largest absolute entry of a dense or sparse matrix."""
    if sp.issparse(a):
        a = a.tocoo()
        return float(np.max(np.abs(a.data))) if a.nnz else 0.0
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def is_hermitian(a, tol: float = 1e-12) -> bool:
    return max_norm(a - a.conj().T) < tol


@dataclass
class StateVector:
    amplitudes: np.ndarray
    basis: Basis = field(repr=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError(f"amplitude shape {self.amplitudes.shape} does not match "
                             f"basis dimension {self.basis.dim}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / self.norm(), self.basis)

    def overlap(self, other: "StateVector") -> complex:
        """``<self|other>``."""
        check_same_basis(self.basis, other.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    @classmethod
    def superpose(cls, terms: Iterable[tuple[complex, "StateVector"]]) -> "StateVector":
        terms = list(terms)
        basis = terms[0][1].basis
        amps = np.zeros(basis.dim, dtype=complex)
        for c, vec in terms:
            check_same_basis(basis, vec.basis)
            amps += c * vec.amplitudes
        return cls(amps, basis)


def check_same_basis(a: Basis, b: Basis) -> None:
    if a is not b and a != b:
        raise ValueError(f"basis mismatch: {a!r} vs {b!r}")
