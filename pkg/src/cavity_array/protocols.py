"""Two-qubit protocol planning and first-order decoherence estimates."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import SelectivityError, SingularParameterError
from .hamiltonian import (RegimeReport, _as_list, _check_disjoint, check_pair_conditions,
                          cross_pair_ratios, effective_coefficients, validate_regime)
from .lattice import Dispersion, LatticeSpec, mode_frequencies, site_from_index, site_index


class ProtocolKind(str, enum.Enum):
    ENTANGLE = "entangle"
    TRANSFER = "transfer"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class PairSchedule:
    site_a: tuple[int, int]
    site_b: tuple[int, int]
    gate: ProtocolKind
    chi: float
    varsigma: float
    interaction_time: float
    predicted_state: np.ndarray = field(repr=False)
    global_phase: float = 0.0

    def to_dict(self) -> dict:
        return {"site_a": list(self.site_a), "site_b": list(self.site_b), "gate": self.gate.value,
                "chi": self.chi, "varsigma": self.varsigma, "interaction_time": self.interaction_time,
                "global_phase": self.global_phase,
                "predicted_state": {"basis": ["gg", "gf", "fg", "ff"],
                                    "real": self.predicted_state.real.tolist(),
                                    "imag": self.predicted_state.imag.tolist()}}


@dataclass(frozen=True)
class ProtocolPlan:
    kind: ProtocolKind
    schedules: tuple[PairSchedule, ...]
    interaction_time: float
    validity: RegimeReport
    cross_ratios: tuple[dict, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def pairs(self):
        return [(s.site_a, s.site_b) for s in self.schedules]

    @property
    def predicted_state(self) -> np.ndarray:
        if len(self.schedules) != 1:
            raise ValueError("multi-pair plans carry one predicted state per pair")
        return self.schedules[0].predicted_state

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "interaction_time": self.interaction_time,
                "pairs": [s.to_dict() for s in self.schedules],
                "cross_pair_ratios": list(self.cross_ratios),
                "regime": {"passed": self.validity.passed, "threshold": self.validity.threshold,
                           "worst": self.validity.to_dict()["worst"]},
                "notes": list(self.notes)}


def _pair_coefficients(a, b, spec, params, dispersion):
    check_pair_conditions(a, b, spec, params)
    coeffs = effective_coefficients(spec, params, dispersion)
    chi = coeffs.chi_between(a, b)
    if abs(chi.imag) > 1e-12 * max(1.0, abs(chi)):
        raise ValueError(f"exchange coupling {chi} is not real")
    if chi.real == 0:
        raise ValueError(f"sites {tuple(a)} and {tuple(b)} do not exchange (chi = 0); are both driven?")
    return chi.real, coeffs.varsigma_at(a)


def _entangle_schedule(a, b, chi, varsigma) -> PairSchedule:
    t = np.pi / (4 * abs(chi))
    phase = -varsigma * t
    state = np.zeros(4, dtype=complex)
    state[2] = 1 / np.sqrt(2)
    state[1] = -1j * np.sign(chi) / np.sqrt(2)
    return PairSchedule(tuple(a), tuple(b), ProtocolKind.ENTANGLE, chi, varsigma, t,
                        np.exp(1j * phase) * state, phase)


def _transfer_schedule(a, b, chi, varsigma, c0, c1) -> PairSchedule:
    # full swap of the single excitation at chi t = pi / 2
    t = np.pi / (2 * abs(chi))
    phase = -varsigma * t
    state = np.zeros(4, dtype=complex)
    state[1] = -1j * np.sign(chi) * np.exp(1j * phase) * c0
    state[0] = c1
    return PairSchedule(tuple(a), tuple(b), ProtocolKind.TRANSFER, chi, varsigma, t, state, phase)


def plan_entanglement(a, b, spec: LatticeSpec, params, dispersion=None) -> ProtocolPlan:
    """Exchange for ``pi / (4 |chi|)`` taking ``|fg>`` to ``(|fg> - i sign(chi) |gf>) / sqrt 2``."""
    chi, varsigma = _pair_coefficients(a, b, spec, params, dispersion)
    schedule = _entangle_schedule(a, b, chi, varsigma)
    return ProtocolPlan(ProtocolKind.ENTANGLE, (schedule,), schedule.interaction_time,
                        validate_regime(spec, params, dispersion))


def plan_state_transfer(a, b, c0: complex, c1: complex, spec: LatticeSpec, params,
                        dispersion=None) -> ProtocolPlan:
    """Move ``c0|f> + c1|g>`` from site A to site B in ``pi / (2 |chi|)``.

    The final state is ``|g>_A (-i sign(chi) e^{-i varsigma t} c0 |f>_B + c1 |g>_B)``;
    the relative phase ``-varsigma t`` is stored as ``global_phase``.
    """
    if abs(abs(c0) ** 2 + abs(c1) ** 2 - 1) > 1e-9:
        raise ValueError(f"|c0|^2 + |c1|^2 = {abs(c0) ** 2 + abs(c1) ** 2} != 1")
    chi, varsigma = _pair_coefficients(a, b, spec, params, dispersion)
    schedule = _transfer_schedule(a, b, chi, varsigma, c0, c1)
    return ProtocolPlan(ProtocolKind.TRANSFER, (schedule,), schedule.interaction_time,
                        validate_regime(spec, params, dispersion),
                        notes=(f"relative phase of the transferred |f> component: {schedule.global_phase!r} rad",))


def plan_parallel(pairs, spec: LatticeSpec, params, dispersion=None, gates=None,
                  amplitudes=None, threshold: float = 20.0) -> ProtocolPlan:
    """Simultaneous schedule for disjoint pairs; the round lasts as long as the slowest pair.

    ``gates`` lists ``"entangle"`` or ``"transfer"`` per pair (default entangle);
    ``amplitudes`` gives ``(c0, c1)`` per transfer pair (default ``(1, 0)``).
    """
    pairs = [tuple(tuple(s) for s in pair) for pair in pairs]
    _check_disjoint(pairs)
    gates = [ProtocolKind(g) for g in (gates or [ProtocolKind.ENTANGLE] * len(pairs))]
    if len(gates) != len(pairs):
        raise ValueError("one gate kind per pair is required")
    amplitudes = list(amplitudes or [(1.0, 0.0)] * len(pairs))
    schedules = []
    for (a, b), gate, (c0, c1) in zip(pairs, gates, amplitudes):
        chi, varsigma = _pair_coefficients(a, b, spec, params, dispersion)
        if gate is ProtocolKind.ENTANGLE:
            schedules.append(_entangle_schedule(a, b, chi, varsigma))
        elif gate is ProtocolKind.TRANSFER:
            schedules.append(_transfer_schedule(a, b, chi, varsigma, c0, c1))
        else:
            raise ValueError(f"unsupported per-pair gate {gate.value!r}")
    ratios = cross_pair_ratios(pairs, spec, params, dispersion)
    for row in ratios:
        if row["ratio"] < threshold:
            raise SelectivityError(
                f"cross-pair ratio={row['ratio']:.4g} between {row['site_a']} and {row['site_b']} "
                f"is below threshold {threshold}")
    kind = ProtocolKind.PARALLEL if len(pairs) > 1 else gates[0]
    return ProtocolPlan(kind, tuple(schedules), max(s.interaction_time for s in schedules),
                        validate_regime(spec, params, dispersion), tuple(ratios))


REFERENCE_ESTIMATES = {"p1": 3.2e-3, "p2": 6.98e-3, "fidelity": 0.95,
                       "chi": 7.63e-4, "time": 1.03e3, "gamma": 1 / 300, "kappa": 1 / 1800}


@dataclass(frozen=True)
class DecoherenceEstimate:
    p1: float
    p2: float
    p2_plus: float
    gamma_e: float
    kappa_e: float
    fidelity_estimate: float
    gamma: float
    kappa: float
    time: float
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"p1": self.p1, "p2": self.p2, "p2_minus_omega": self.p2, "p2_plus_omega": self.p2_plus,
                "gamma": self.gamma, "kappa": self.kappa, "time": self.time,
                "gamma_e": self.gamma_e, "kappa_e": self.kappa_e,
                "fidelity_estimate": self.fidelity_estimate, "notes": self.notes}


def fidelity_chain(p1: float, p2: float, gamma: float, kappa: float, t: float) -> float:
    """``1 - (p1 gamma + p2 kappa) t``."""
    return 1 - (p1 * gamma + p2 * kappa) * t


def estimate_decoherence(spec: LatticeSpec, params, dispersion=None, gamma: float = 0.0,
                         kappa: float = 0.0, t: float = 1.0, sites=None) -> DecoherenceEstimate:
    """First-order loss estimate for the driven atoms in ``sites`` (default: all driven).

    ``p1 = sum_s Omega_s^2 / delta2_s^2`` (``2 Omega^2 / delta2^2`` for a matched
    pair).  ``p2`` sums ``lambda^2 / (delta1 - omega - delta2)^2`` over sites and
    modes; ``p2_plus`` uses ``delta1 + omega - delta2`` instead.
    """
    if gamma < 0 or kappa < 0:
        raise ValueError("decay rates must be non-negative")
    if not t > 0:
        raise ValueError("time must be positive")
    dispersion = Dispersion(dispersion or spec.dispersion)
    plist = _as_list(spec, params)
    coeffs = effective_coefficients(spec, plist, dispersion)
    if sites is None:
        idx = list(np.flatnonzero(coeffs.driven))
    else:
        idx = [site_index(s, spec) for s in sites]
    omega = mode_frequencies(spec, dispersion)
    p1 = p2 = p2_plus = 0.0
    for s in idx:
        p = plist[s]
        if not p.driven:
            continue
        p1 += p.omega_rabi ** 2 / p.delta2 ** 2
        lam = coeffs.lam[s]
        minus = p.delta1 - omega - p.delta2
        plus = p.delta1 + omega - p.delta2
        if np.any(np.abs(plus) < 1e-12):
            raise SingularParameterError(f"site {site_from_index(s, spec)}: delta1 + omega - delta2 = 0")
        p2 += float(np.sum(lam ** 2 / minus ** 2))
        p2_plus += float(np.sum(lam ** 2 / plus ** 2))
    gamma_e = p1 * gamma
    kappa_e = p2 * kappa
    ref = REFERENCE_ESTIMATES
    notes = {
        "reference_values": {"p1": ref["p1"], "p2": ref["p2"], "fidelity": ref["fidelity"]},
        "reference_chain_fidelity": fidelity_chain(ref["p1"], ref["p2"], ref["gamma"], ref["kappa"], ref["time"]),
        "p1_matches_reference": bool(np.isclose(p1, ref["p1"], rtol=0.01)),
        "p2_matches_reference": bool(np.isclose(p2, ref["p2"], rtol=0.01)),
        "comment": ("reference values for the two-site benchmark; "
                    "the formulas here do not reproduce p1 = 3.2e-3 and are reported side by side"),
    }
    return DecoherenceEstimate(p1, p2, p2_plus, gamma_e, kappa_e, 1 - (gamma_e + kappa_e) * t,
                               gamma, kappa, t, notes)
