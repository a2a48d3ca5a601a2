"""Full and effective Hamiltonians of the driven cavity array.

Conventions (hbar = 1, all rates in units of the reference coupling g0):

* ``delta1`` is the detuning of the cavity-coupled ``g <-> e`` arm and
  ``delta2`` that of the laser-driven ``f <-> e`` arm; a site with
  ``omega_rabi == 0`` is undriven and its ``delta2`` is ignored.
* The interaction-picture model is
  ``H(t) = sum_s [g a_s |e><g|_s e^{i delta1 t} + Omega |e><f|_s e^{i delta2 t} + h.c.]
  + sum_ab h_ab a_a^+ a_b`` with ``h`` the periodic nearest-neighbour hopping
  matrix (normal ordered, so constant offsets are dropped).
* The exchange term of the effective model carries the phase
  ``exp(+i[(delta1_b - delta1_a) - (delta2_b - delta2_a)] t)`` on
  ``S+_b S-_a``; this is the sign produced by the interaction picture above.
"""
from __future__ import annotations

import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import LabFrameError, PreconditionError, RegimeWarning, SingularParameterError
from .hilbert import AtomLevel, Basis, PhotonRep, build_term
from .lattice import (Dispersion, LatticeSpec, SiteIndex, fourier_matrix, hopping_matrix,
                      mode_frequencies, site_from_index, site_index)

G, F, E = AtomLevel.G, AtomLevel.F, AtomLevel.E
_SINGULAR = 1e-12


@dataclass(frozen=True)
class SiteParams:
    g: float = 1.0
    omega_rabi: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0

    def __post_init__(self):
        if self.g < 0 or self.omega_rabi < 0:
            raise ValueError(f"couplings must be non-negative: {self}")

    @property
    def driven(self) -> bool:
        return self.omega_rabi != 0

    @property
    def raman_detuning(self) -> float:
        """``delta1 - delta2``: two-photon detuning of the f level."""
        return self.delta1 - self.delta2


def make_params(spec: LatticeSpec, default: SiteParams = SiteParams(),
                overrides: Mapping | None = None) -> tuple[SiteParams, ...]:
    """Per-site parameters in row-major order.

    ``overrides`` maps ``(j, k)`` to a ``SiteParams`` or to a dict of fields
    replacing the default.
    """
    params = [default] * spec.n_sites
    for site, value in (overrides or {}).items():
        i = site_index(site, spec)
        params[i] = value if isinstance(value, SiteParams) else replace(default, **value)
    return tuple(params)


def _as_list(spec: LatticeSpec, params) -> list[SiteParams]:
    if isinstance(params, Mapping):
        return list(make_params(spec, overrides=params))
    params = list(params)
    if len(params) != spec.n_sites:
        raise ValueError(f"expected {spec.n_sites} site parameter sets, got {len(params)}")
    return params


def _check_basis(spec: LatticeSpec, basis: Basis) -> None:
    if basis.spec.N != spec.N:
        raise ValueError(f"basis built for N={basis.spec.N} but lattice has N={spec.N}")


class TimeDependentOperator:
    """``H(t) = static + sum_k [exp(i nu_k t) A_k + exp(-i nu_k t) A_k^+]``.

    Instances are immutable and safe to evaluate from several threads.
    """

    def __init__(self, static, terms: Sequence[tuple[float, sp.spmatrix]] = ()):
        self.static = sp.csr_matrix(static, dtype=complex)
        grouped: dict[float, sp.csr_matrix] = {}
        for nu, a in terms:
            a = sp.csr_matrix(a, dtype=complex)
            if a.nnz == 0:
                continue
            nu = float(nu)
            if nu == 0.0:
                self.static = self.static + a + a.conj().T
                continue
            grouped[nu] = grouped[nu] + a if nu in grouped else a
        self.terms = tuple(sorted(grouped.items(), key=lambda item: item[0]))
        self._dense = None

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    @property
    def is_static(self) -> bool:
        return not self.terms

    def __call__(self, t: float) -> sp.csr_matrix:
        h = self.static.copy()
        for nu, a in self.terms:
            phase = np.exp(1j * nu * t)
            h = h + phase * a + np.conj(phase) * a.conj().T
        return h

    def dense_parts(self):
        if self._dense is None:
            self._dense = (self.static.toarray(),
                           tuple((nu, a.toarray()) for nu, a in self.terms))
        return self._dense

    def matvec(self, t: float, psi: np.ndarray) -> np.ndarray:
        static, terms = self.dense_parts()
        out = static @ psi
        for nu, a in terms:
            phase = np.exp(1j * nu * t)
            out += phase * (a @ psi) + np.conj(phase) * (a.conj().T @ psi)
        return out

    def static_frame(self, tol: float = 1e-9):
        """Diagonal frame in which the operator is time independent.

        Returns ``(H_rot, d)`` such that ``psi(t) = exp(-i d t) * phi(t)`` and
        ``i dphi/dt = H_rot phi``, or ``None`` if the term frequencies are not
        generated by per-state energies.
        """
        if self.is_static:
            return self.static, np.zeros(self.dim)
        # d_i - d_j = -nu on every nonzero element (i, j) of a term A, and
        # d_i = d_j on every static element.
        edges = defaultdict(list)
        static = self.static.tocoo()
        for i, j in zip(static.row, static.col):
            if i != j:
                edges[i].append((j, 0.0))
                edges[j].append((i, 0.0))
        for nu, a in self.terms:
            a = a.tocoo()
            for i, j in zip(a.row, a.col):
                edges[j].append((i, -nu))  # d_i = d_j - nu
                edges[i].append((j, nu))
        d = np.full(self.dim, np.nan)
        scale = max(1.0, max(abs(nu) for nu, _ in self.terms))
        for root in range(self.dim):
            if not np.isnan(d[root]):
                continue
            d[root] = 0.0
            queue = deque([root])
            while queue:
                j = queue.popleft()
                for i, shift in edges[j]:
                    target = d[j] + shift
                    if np.isnan(d[i]):
                        d[i] = target
                        queue.append(i)
                    elif abs(d[i] - target) > tol * scale:
                        return None
        h = self.static.copy()
        for _, a in self.terms:
            h = h + a + a.conj().T
        h = h - sp.diags(d)
        return sp.csr_matrix(h), d


# ---------------------------------------------------------------------------
# Full model

def _photon_part(spec: LatticeSpec, basis: Basis) -> sp.csr_matrix:
    h = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    if basis.sector.photon_cap == 0:
        return h
    if basis.representation is PhotonRep.LOCAL:
        hop = hopping_matrix(spec)
        for a, b in zip(*np.nonzero(hop)):
            h = h + build_term(basis, boson_steps=[("create", a), ("annihilate", b)],
                               coefficient=hop[a, b])
    else:
        for q, omega in enumerate(mode_frequencies(spec)):
            if omega != 0:
                h = h + build_term(basis, boson_steps=[("number", q)], coefficient=omega)
    return h


def _cavity_coupling(spec: LatticeSpec, basis: Basis, s: int, g: float) -> sp.csr_matrix:
    """``g a_s |e><g|_s`` in the basis' photon representation."""
    if basis.representation is PhotonRep.LOCAL:
        return build_term(basis, {s: (G, E)}, [("annihilate", s)], coefficient=g)
    U = fourier_matrix(spec)
    op = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for q in range(spec.n_sites):
        op = op + build_term(basis, {s: (G, E)}, [("annihilate", q)], coefficient=g * U[s, q])
    return op


def full_interaction_operator(spec: LatticeSpec, params, basis: Basis) -> TimeDependentOperator:
    """Interaction-picture Hamiltonian of the array as a callable operator.

    In a momentum-mode basis the photon energies follow ``spec.dispersion``;
    with ``Dispersion.SEPARABLE`` this is unitarily equivalent to the local model.
    """
    _check_basis(spec, basis)
    params = _as_list(spec, params)
    terms = []
    for s, p in enumerate(params):
        if p.g and basis.sector.photon_cap > 0:
            terms.append((p.delta1, _cavity_coupling(spec, basis, s, p.g)))
        if p.driven:
            terms.append((p.delta2, build_term(basis, {s: (F, E)}, coefficient=p.omega_rabi)))
    return TimeDependentOperator(_photon_part(spec, basis), terms)


def build_full_interaction(t: float, spec: LatticeSpec, params, basis: Basis) -> sp.csr_matrix:
    return full_interaction_operator(spec, params, basis)(t)


@dataclass(frozen=True)
class LabFrameParams:
    """Bare frequencies; ``omega_c`` and ``omega_l`` may be scalars or per-site."""

    omega_f: float
    omega_e: float
    omega_c: float | tuple[float, ...]
    omega_l: float | tuple[float, ...]

    def per_site(self, spec: LatticeSpec, name: str) -> np.ndarray:
        value = getattr(self, name)
        arr = np.broadcast_to(np.asarray(value, dtype=float), (spec.n_sites,))
        return np.array(arr)

    def check_consistency(self, spec: LatticeSpec, params, tol: float = 1e-12) -> None:
        params = _as_list(spec, params)
        wc = self.per_site(spec, "omega_c")
        wl = self.per_site(spec, "omega_l")
        for s, p in enumerate(params):
            site = site_from_index(s, spec)
            if abs((self.omega_e - wc[s]) - p.delta1) > tol:
                raise LabFrameError(f"site {site}: omega_e - omega_c = {self.omega_e - wc[s]!r} "
                                    f"but delta1 = {p.delta1!r}")
            if p.driven and abs((self.omega_e - self.omega_f - wl[s]) - p.delta2) > tol:
                raise LabFrameError(f"site {site}: omega_e - omega_f - omega_l = "
                                    f"{self.omega_e - self.omega_f - wl[s]!r} but delta2 = {p.delta2!r}")

    def free_energies(self, basis: Basis) -> np.ndarray:
        """Diagonal of the free Hamiltonian (|g> is the energy zero)."""
        wc = self.per_site(basis.spec, "omega_c")
        out = np.zeros(basis.dim)
        for i, state in enumerate(basis.states):
            out[i] = (self.omega_f * sum(a == F for a in state.atoms)
                      + self.omega_e * sum(a == E for a in state.atoms))
            if basis.representation is PhotonRep.LOCAL:
                out[i] += float(np.dot(wc, state.photons))
            else:
                out[i] += wc[0] * sum(state.photons)
        return out


def build_full_lab(spec: LatticeSpec, params, lab: LabFrameParams, basis: Basis) -> TimeDependentOperator:
    """Lab-frame Hamiltonian with number-operator cavity energies.

    Its interaction picture reproduces ``full_interaction_operator`` when all
    cavities share one frequency; with unequal ``omega_c`` the hopping picks
    up phases that the interaction-picture model does not carry.
    """
    _check_basis(spec, basis)
    params = _as_list(spec, params)
    lab.check_consistency(spec, params)
    if basis.representation is PhotonRep.MOMENTUM and np.ptp(lab.per_site(spec, "omega_c")) != 0:
        raise ValueError("momentum-mode lab frame needs a uniform cavity frequency")
    wl = lab.per_site(spec, "omega_l")
    static = sp.diags(lab.free_energies(basis)).tocsr() + _photon_part(spec, basis)
    terms = []
    for s, p in enumerate(params):
        if p.g and basis.sector.photon_cap > 0:
            terms.append((0.0, _cavity_coupling(spec, basis, s, p.g)))
        if p.driven:
            terms.append((-wl[s], build_term(basis, {s: (F, E)}, coefficient=p.omega_rabi)))
    return TimeDependentOperator(static, terms)


# ---------------------------------------------------------------------------
# Effective model

@dataclass(frozen=True)
class EffectiveCoefficients:
    """Arrays indexed ``[site]`` or ``[site, mode]`` in row-major order.

    Undriven sites carry zeros in every drive-dependent array.
    """

    spec: LatticeSpec
    dispersion: Dispersion
    omega: np.ndarray = field(repr=False)
    epsilon: np.ndarray = field(repr=False)
    zeta: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    chi: np.ndarray = field(repr=False)
    varsigma: np.ndarray = field(repr=False)
    driven: np.ndarray = field(repr=False)

    def chi_between(self, a, b) -> complex:
        return complex(self.chi[site_index(a, self.spec), site_index(b, self.spec)])

    def varsigma_at(self, site) -> float:
        return float(self.varsigma[site_index(site, self.spec)])

    def driven_sites(self) -> list[SiteIndex]:
        return [site_from_index(int(s), self.spec) for s in np.flatnonzero(self.driven)]


def effective_coefficients(spec: LatticeSpec, params, dispersion: Dispersion | str | None = None
                           ) -> EffectiveCoefficients:
    dispersion = Dispersion(dispersion or spec.dispersion)
    params = _as_list(spec, params)
    N, M = spec.N, spec.n_sites
    omega = mode_frequencies(spec, dispersion)
    g = np.array([p.g for p in params])
    Om = np.array([p.omega_rabi for p in params])
    d1 = np.array([p.delta1 for p in params])[:, None]
    d2 = np.array([p.delta2 for p in params])
    driven = Om != 0

    cav = d1 - omega[None, :]
    raman = cav - d2[:, None]
    for s in np.flatnonzero(driven):
        site = site_from_index(int(s), spec)
        if abs(d2[s]) < _SINGULAR:
            raise SingularParameterError(f"site {site}: delta2 = 0")
        for q in range(M):
            mode = site_from_index(q, spec)
            if abs(cav[s, q]) < _SINGULAR:
                raise SingularParameterError(f"site {site}, mode {mode}: delta1 - omega = 0")
            if abs(raman[s, q]) < _SINGULAR:
                raise SingularParameterError(f"site {site}, mode {mode}: delta1 - omega - delta2 = 0")

    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(np.abs(cav) < _SINGULAR, np.nan, g[:, None] ** 2 / (N ** 2 * cav))
        inv_cav = np.where(driven[:, None], 1 / np.where(driven[:, None], cav, 1), 0)
        inv_d2 = np.where(driven, 1 / np.where(driven, d2, 1), 0)
        inv_raman = np.where(driven[:, None], 1 / np.where(driven[:, None], raman, 1), 0)
    epsilon = np.where(driven, Om ** 2 * inv_d2, 0.0)
    lam = (g * Om / (2 * N))[:, None] * (inv_cav + inv_d2[:, None])
    xi = lam ** 2 * inv_raman

    U = fourier_matrix(spec)
    X = lam * inv_raman
    chi = 0.5 * N ** 2 * ((X * U) @ (lam * U.conj()).T + (lam * U) @ (X * U.conj()).T)
    np.fill_diagonal(chi, 0)
    varsigma = xi.sum(axis=1) - epsilon
    return EffectiveCoefficients(spec, dispersion, omega, epsilon, zeta, lam, xi, chi, varsigma, driven)


def _exchange_phase_rate(pa: SiteParams, pb: SiteParams) -> float:
    """Frequency of the ``S+_b S-_a`` term."""
    return pb.raman_detuning - pa.raman_detuning


def build_effective_general(spec: LatticeSpec, params, dispersion: Dispersion | str | None,
                            basis: Basis, threshold: float = 10.0) -> TimeDependentOperator:
    """Effective atoms-only Hamiltonian with photons left in vacuum.

    Each unordered pair of driven sites contributes one exchange term plus its
    adjoint.  Regime violations are reported as ``RegimeWarning``.
    """
    _check_basis(spec, basis)
    if basis.sector.photon_cap != 0:
        raise ValueError("effective model acts on atoms only; use photon_cap=0")
    params = _as_list(spec, params)
    coeffs = effective_coefficients(spec, params, dispersion)
    report = validate_regime(spec, params, dispersion, threshold)
    if not report.passed:
        warnings.warn(f"far-detuned regime violated: {report.summary()}", RegimeWarning, stacklevel=2)
    static = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    driven = list(np.flatnonzero(coeffs.driven))
    for s in driven:
        static = static + build_term(basis, {int(s): (F, F)}, coefficient=coeffs.varsigma[s])
    terms = []
    for i, a in enumerate(driven):
        for b in driven[i + 1:]:
            chi = coeffs.chi[a, b]
            if chi == 0:
                continue
            op = build_term(basis, {int(a): (F, G), int(b): (G, F)}, coefficient=chi)
            terms.append((_exchange_phase_rate(params[a], params[b]), op))
    return TimeDependentOperator(static, terms)


PAIR_LABELS = ("gg", "gf", "fg", "ff")  # first letter is site A


def check_pair_conditions(a, b, spec: LatticeSpec, params, tol: float = 1e-12) -> None:
    if tuple(a) == tuple(b):
        raise ValueError(f"pair sites must differ, got {tuple(a)} twice")
    params = _as_list(spec, params)
    pa = params[site_index(a, spec)]
    pb = params[site_index(b, spec)]
    if abs(pa.g - pb.g) > tol:
        raise PreconditionError(f"g mismatch: g{tuple(a)} = {pa.g} != g{tuple(b)} = {pb.g}")
    if abs(pa.omega_rabi - pb.omega_rabi) > tol:
        raise PreconditionError(f"Omega mismatch: Omega{tuple(a)} = {pa.omega_rabi} "
                                f"!= Omega{tuple(b)} = {pb.omega_rabi}")
    if abs((pb.delta1 - pa.delta1) - (pb.delta2 - pa.delta2)) > tol:
        raise PreconditionError(
            f"detuning mismatch: delta1 difference {pb.delta1 - pa.delta1} != "
            f"delta2 difference {pb.delta2 - pa.delta2}")


def _pair_block(varsigma_a: float, varsigma_b: float, chi: complex) -> np.ndarray:
    h = np.zeros((4, 4), dtype=complex)
    h[2, 2] = varsigma_a
    h[1, 1] = varsigma_b
    h[3, 3] = varsigma_a + varsigma_b
    h[1, 2] = chi          # |gf><fg| = S+_B S-_A
    h[2, 1] = np.conj(chi)
    return h


def build_effective_pair(a, b, spec: LatticeSpec, params, dispersion: Dispersion | str | None = None
                         ) -> np.ndarray:
    """4x4 pair Hamiltonian in the order ``|gg>, |gf>, |fg>, |ff>`` (site A first).

    Each site keeps its own Stark shift; the two coincide when the detunings match.
    """
    check_pair_conditions(a, b, spec, params)
    coeffs = effective_coefficients(spec, params, dispersion)
    return _pair_block(coeffs.varsigma_at(a), coeffs.varsigma_at(b), coeffs.chi_between(a, b))


def cross_pair_ratios(pairs, spec: LatticeSpec, params, dispersion=None) -> list[dict]:
    """Selectivity ratio ``|delta_a - delta_a'| / |chi_aa'|`` for every cross-pair site pair."""
    params = _as_list(spec, params)
    coeffs = effective_coefficients(spec, params, dispersion)
    out = []
    for i, pair in enumerate(pairs):
        for other in pairs[i + 1:]:
            for a in pair:
                for b in other:
                    pa, pb = params[site_index(a, spec)], params[site_index(b, spec)]
                    offset = abs(pa.raman_detuning - pb.raman_detuning)
                    chi = abs(coeffs.chi_between(a, b))
                    ratio = np.inf if chi == 0 else offset / chi
                    out.append({"site_a": tuple(a), "site_b": tuple(b), "offset": offset,
                                "chi": chi, "ratio": float(ratio)})
    return out


def _check_disjoint(pairs) -> None:
    seen = set()
    for pair in pairs:
        for site in pair:
            if tuple(site) in seen:
                raise ValueError(f"site {tuple(site)} appears in more than one pair")
            seen.add(tuple(site))


def build_effective_parallel(pairs, spec: LatticeSpec, params, dispersion=None,
                             threshold: float = 20.0) -> np.ndarray:
    """Block Hamiltonian of independent pairs, qubits ordered A0, B0, A1, B1, ...

    Cross-pair couplings are omitted; a ``RegimeWarning`` flags any cross-pair
    ratio below ``threshold``.
    """
    pairs = [tuple(tuple(s) for s in pair) for pair in pairs]
    _check_disjoint(pairs)
    for a, b in pairs:
        check_pair_conditions(a, b, spec, params)
    for row in cross_pair_ratios(pairs, spec, params, dispersion):
        if row["ratio"] < threshold:
            warnings.warn(f"cross-pair ratio {row['ratio']:.3g} between {row['site_a']} and "
                          f"{row['site_b']} below {threshold}", RegimeWarning, stacklevel=2)
    coeffs = effective_coefficients(spec, params, dispersion)
    n = len(pairs)
    h = np.zeros((4 ** n, 4 ** n), dtype=complex)
    for i, (a, b) in enumerate(pairs):
        block = _pair_block(coeffs.varsigma_at(a), coeffs.varsigma_at(b), coeffs.chi_between(a, b))
        h += np.kron(np.kron(np.eye(4 ** i), block), np.eye(4 ** (n - i - 1)))
    return h


@dataclass(frozen=True)
class RegimeEntry:
    site: SiteIndex
    mode: SiteIndex | None
    omega: float | None
    drive_ratio: float | None
    cavity_ratio: float | None
    raman_ratio: float | None
    passed: bool | None

    def to_dict(self) -> dict:
        return {"site": list(self.site), "mode": list(self.mode) if self.mode else None,
                "omega": self.omega, "drive_ratio": self.drive_ratio,
                "cavity_ratio": self.cavity_ratio, "raman_ratio": self.raman_ratio,
                "status": "n/a" if self.passed is None else ("pass" if self.passed else "fail")}


@dataclass(frozen=True)
class RegimeReport:
    threshold: float
    dispersion: Dispersion
    entries: tuple[RegimeEntry, ...]

    def _applicable(self):
        return [e for e in self.entries if e.passed is not None]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self._applicable())

    def worst(self, ratio: str) -> float | None:
        values = [getattr(e, ratio) for e in self._applicable()]
        return min(values) if values else None

    def summary(self) -> str:
        return ", ".join(f"{name}={self.worst(name):.4g}" for name in
                         ("drive_ratio", "cavity_ratio", "raman_ratio") if self.worst(name) is not None)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "dispersion": self.dispersion.value,
                "passed": self.passed,
                "worst": {name: self.worst(name) for name in ("drive_ratio", "cavity_ratio", "raman_ratio")},
                "entries": [e.to_dict() for e in self.entries]}


def validate_regime(spec: LatticeSpec, params, dispersion: Dispersion | str | None = None,
                    threshold: float = 10.0) -> RegimeReport:
    """Far-detuning ratios per driven site and mode against ``threshold``."""
    dispersion = Dispersion(dispersion or spec.dispersion)
    params = _as_list(spec, params)
    omega = mode_frequencies(spec, dispersion)
    N = spec.N
    entries = []
    for s, p in enumerate(params):
        site = site_from_index(s, spec)
        if not p.driven:
            entries.append(RegimeEntry(site, None, None, None, None, None, None))
            continue
        drive = abs(p.delta2) / p.omega_rabi
        for q, w in enumerate(omega):
            cav = p.delta1 - w
            lam = abs(p.g * p.omega_rabi / (2 * N) * (1 / cav + 1 / p.delta2)) if cav and p.delta2 else np.inf
            cavity = np.inf if p.g == 0 else abs(cav) / (p.g / N)
            raman = np.inf if lam == 0 else abs(cav - p.delta2) / lam
            ok = min(drive, cavity, raman) >= threshold
            entries.append(RegimeEntry(site, site_from_index(q, spec), float(w), float(drive),
                                       float(cavity), float(raman), bool(ok)))
    return RegimeReport(threshold, dispersion, tuple(entries))
