"""State-vector propagation and observables.

``propagate`` integrates ``i dpsi/dt = H(t) psi`` with fixed-step RK4 or an
adaptive embedded Runge-Kutta pair.  When an operator admits a diagonal
rotating frame in which it is static (always the case for the array models),
the integration runs in that frame and states are rotated back before any
observable is recorded.  A static RK4 step is a fixed matrix polynomial, so
the steps between two samples are applied as one precomputed matrix power.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import curve_fit

from .errors import AccuracyError
from .hamiltonian import PAIR_LABELS, TimeDependentOperator, build_effective_general, full_interaction_operator
from .hilbert import AtomLevel, Basis, StateVector, check_same_basis

NORM_DRIFT_LIMIT = 1e-4
DENSE_LIMIT = 4096


class Method(str, enum.Enum):
    RK4 = "rk4"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class PropagatorConfig:
    method: Method = Method.RK4
    step: float = 1e-3
    tolerance: float = 1e-8
    renormalize: bool = False
    frame: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not 0 < self.tolerance <= 1e-3:
            raise ValueError(f"tolerance must lie in (0, 1e-3], got {self.tolerance}")
        if self.frame not in ("auto", "none"):
            raise ValueError(f"frame must be 'auto' or 'none', got {self.frame!r}")


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    states: np.ndarray | None = None
    basis: Basis | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        for name, series in self.observables.items():
            if len(series) != len(self.times):
                raise ValueError(f"observable {name!r} has {len(series)} samples, "
                                 f"expected {len(self.times)}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]

    def state_at(self, i: int) -> StateVector:
        if self.states is None:
            raise ValueError("trajectory was recorded without states")
        return StateVector(self.states[i], self.basis)

    @property
    def final_state(self) -> StateVector:
        return self.state_at(-1)


Observable = Callable[[np.ndarray], float]


def sample_times(t_end: float, sample_every: float | None) -> np.ndarray:
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    if sample_every is None or sample_every >= t_end:
        return np.array([0.0, float(t_end)])
    n = int(math.floor(t_end / sample_every + 1e-9))
    times = sample_every * np.arange(n + 1)
    if t_end - times[-1] > 1e-9 * max(1.0, t_end):
        times = np.append(times, t_end)
    else:
        times[-1] = t_end
    return times


def _rk4_amplification(h: np.ndarray, dt: float) -> np.ndarray:
    a = -1j * dt * h
    eye = np.eye(h.shape[0], dtype=complex)
    a2 = a @ a
    return eye + a + a2 / 2 + a2 @ a / 6 + a2 @ a2 / 24


def _rk4_static_sparse(h: sp.csr_matrix, psi: np.ndarray, dt: float, n: int) -> np.ndarray:
    for _ in range(n):
        k1 = -1j * (h @ psi)
        k2 = -1j * (h @ (psi + 0.5 * dt * k1))
        k3 = -1j * (h @ (psi + 0.5 * dt * k2))
        k4 = -1j * (h @ (psi + dt * k3))
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


def _rk4_timedep(op: TimeDependentOperator, psi: np.ndarray, t0: float, dt: float, n: int) -> np.ndarray:
    t = t0
    for _ in range(n):
        k1 = -1j * op.matvec(t, psi)
        k2 = -1j * op.matvec(t + 0.5 * dt, psi + 0.5 * dt * k1)
        k3 = -1j * op.matvec(t + 0.5 * dt, psi + 0.5 * dt * k2)
        k4 = -1j * op.matvec(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return psi


def propagate(H, psi0, t_end: float, cfg: PropagatorConfig | None = None,
              record: Mapping[str, Observable] | None = None, sample_every: float | None = 0.5,
              store_states: bool = False) -> Trajectory:
    """Solve ``i dpsi/dt = H(t) psi`` from ``t = 0`` to ``t_end``.

    ``H`` is a ``TimeDependentOperator`` or a static (dense or sparse) matrix.
    ``record`` maps observable names to functions of the amplitude vector,
    evaluated on the sample grid ``0, sample_every, ..., t_end``.

    Raises ``AccuracyError`` when the norm drifts by more than 1e-4.
    """
    cfg = cfg or PropagatorConfig()
    basis = psi0.basis if isinstance(psi0, StateVector) else None
    psi = np.array(psi0.amplitudes if isinstance(psi0, StateVector) else psi0, dtype=complex)
    if not isinstance(H, TimeDependentOperator):
        H = TimeDependentOperator(H)
    if H.dim != psi.shape[0]:
        raise ValueError(f"operator dimension {H.dim} does not match state dimension {psi.shape[0]}")
    if abs(np.linalg.norm(psi) - 1) > 1e-9:
        raise ValueError(f"initial state is not normalized (norm {np.linalg.norm(psi):.12g})")

    frame = H.static_frame() if cfg.frame == "auto" else None
    if frame is not None:
        h_static, d = frame
    elif H.is_static:
        h_static, d = H.static, np.zeros(H.dim)
    else:
        h_static, d = None, None

    times = sample_times(t_end, sample_every)
    record = dict(record or {})
    series = {name: np.empty(len(times)) for name in record}
    states = np.empty((len(times), H.dim), dtype=complex) if store_states else None

    def emit(i: int, phi: np.ndarray) -> np.ndarray:
        lab = phi if d is None else np.exp(-1j * d * times[i]) * phi
        drift = abs(np.linalg.norm(lab) - 1)
        if drift > NORM_DRIFT_LIMIT:
            raise AccuracyError(f"norm drift {drift:.3g} at t={times[i]:.6g} exceeds "
                                f"{NORM_DRIFT_LIMIT}; reduce the step or tolerance")
        for name, fn in record.items():
            series[name][i] = fn(lab)
        if states is not None:
            states[i] = lab
        return lab

    if cfg.method is Method.ADAPTIVE:
        if h_static is not None:
            fun = lambda t, y: -1j * (h_static @ y)
        else:
            fun = lambda t, y: -1j * H.matvec(t, y)
        sol = solve_ivp(fun, (0.0, times[-1]), psi, method="DOP853", t_eval=times,
                        rtol=cfg.tolerance, atol=cfg.tolerance * 1e-3)
        if not sol.success:
            raise AccuracyError(f"adaptive integrator failed: {sol.message}")
        for i in range(len(times)):
            last = emit(i, sol.y[:, i])
    else:
        dense = h_static is not None and H.dim <= DENSE_LIMIT
        if dense:
            h_dense = h_static.toarray() if sp.issparse(h_static) else np.asarray(h_static)
        cache: dict[tuple[int, float], np.ndarray] = {}
        last = emit(0, psi)
        for i in range(1, len(times)):
            interval = times[i] - times[i - 1]
            n = max(1, int(math.ceil(interval / cfg.step - 1e-9)))
            dt = interval / n
            if dense:
                key = (n, round(dt, 15))
                if key not in cache:
                    cache[key] = np.linalg.matrix_power(_rk4_amplification(h_dense, dt), n)
                psi = cache[key] @ psi
            elif h_static is not None:
                psi = _rk4_static_sparse(h_static, psi, dt, n)
            else:
                psi = _rk4_timedep(H, psi, times[i - 1], dt, n)
            if cfg.renormalize:
                psi = psi / np.linalg.norm(psi)
            last = emit(i, psi)

    meta = {"method": cfg.method.value, "step": cfg.step, "tolerance": cfg.tolerance,
            "frame": "rotating" if frame is not None and not H.is_static else "none",
            "norm_error": float(abs(np.linalg.norm(last) - 1))}
    return Trajectory(times, series, states, basis, meta)


# ---------------------------------------------------------------------------
# Observables

def projector(reference: StateVector) -> Observable:
    ref = reference.amplitudes.copy()
    return lambda psi: float(abs(np.vdot(ref, psi)) ** 2)


def level_population(basis: Basis, site, level) -> Observable:
    mask = basis.level_mask(site, level)
    return lambda psi: float(np.sum(np.abs(psi[mask]) ** 2))


def photon_population(basis: Basis) -> Observable:
    mask = basis.photon_numbers() > 0
    return lambda psi: float(np.sum(np.abs(psi[mask]) ** 2))


def excited_population(basis: Basis) -> Observable:
    mask = np.array([AtomLevel.E in s.atoms for s in basis.states])
    return lambda psi: float(np.sum(np.abs(psi[mask]) ** 2))


def occupation_probability(traj_or_state, reference: StateVector):
    """``|<reference|psi>|^2`` for a state, or the series along a trajectory."""
    if isinstance(traj_or_state, StateVector):
        return abs(reference.overlap(traj_or_state)) ** 2
    traj = traj_or_state
    if traj.states is None:
        raise ValueError("trajectory was recorded without states")
    check_same_basis(reference.basis, traj.basis)
    return np.abs(traj.states @ reference.amplitudes.conj()) ** 2


def fidelity_to(target: StateVector, traj: Trajectory) -> np.ndarray:
    if abs(target.norm() - 1) > 1e-9:
        raise ValueError("target state must be normalized")
    return occupation_probability(traj, target)


@dataclass(frozen=True)
class DeviationReport:
    observable: str
    max_abs: float
    rms: float
    time_of_max: float

    def to_dict(self) -> dict:
        return {"observable": self.observable, "max_abs": self.max_abs, "rms": self.rms,
                "time_of_max": self.time_of_max}


def _interp(x, xp, fp):
    fp = np.asarray(fp)
    if np.iscomplexobj(fp):
        return np.interp(x, xp, fp.real) + 1j * np.interp(x, xp, fp.imag)
    return np.interp(x, xp, fp)


def compare_models(full: Trajectory, effective: Trajectory, observable: str,
                   t_max: float | None = None) -> DeviationReport:
    """Deviation of ``observable`` on the full model's grid within the common time range."""
    lo = max(full.times[0], effective.times[0])
    hi = min(full.times[-1], effective.times[-1])
    if t_max is not None:
        hi = min(hi, t_max)
    mask = (full.times >= lo) & (full.times <= hi)
    if hi < lo or not mask.any():
        raise ValueError("trajectories share no time range")
    t = full.times[mask]
    diff = np.abs(full[observable][mask] - _interp(t, effective.times, effective[observable]))
    i = int(np.argmax(diff))
    return DeviationReport(observable, float(diff[i]), float(np.sqrt(np.mean(diff ** 2))), float(t[i]))


def embed_pair_state(pair_state, a, b, basis: Basis) -> StateVector:
    """Place amplitudes over ``|gg>, |gf>, |fg>, |ff>`` (site A first) onto ``basis``.

    All other atoms are in G and photons in vacuum.  Components with nonzero
    amplitude must exist in the basis.
    """
    pair_state = np.asarray(pair_state, dtype=complex)
    if pair_state.shape != (4,):
        raise ValueError("pair state needs 4 amplitudes")
    amps = np.zeros(basis.dim, dtype=complex)
    for label, c in zip(PAIR_LABELS, pair_state):
        if c == 0:
            continue
        atoms = {a: label[0], b: label[1]}
        i = basis.find(basis.state(atoms))
        if i is None:
            raise ValueError(f"configuration |{label}> on sites {tuple(a)}, {tuple(b)} "
                             f"is outside {basis!r}")
        amps[i] = c
    return StateVector(amps, basis)


def fit_exchange_rate(times: np.ndarray, occupation: np.ndarray) -> float:
    """Fit ``A cos^2(chi t) + B`` to the first exchange half-period and return ``|chi|``.

    The first crossing of ``P = 1/2`` seeds the fit; the fit window extends to
    one estimated period so that fast, small-amplitude wiggles average out.
    """
    times = np.asarray(times)
    occupation = np.asarray(occupation)
    below = np.flatnonzero(occupation < 0.5)
    if below.size == 0:
        raise ValueError("occupation never drops below 1/2; run longer")
    chi0 = np.pi / (4 * times[below[0]])
    window = times <= min(times[-1], np.pi / chi0)
    model = lambda t, amp, chi, off: amp * np.cos(chi * t) ** 2 + off
    (_, chi, _), _ = curve_fit(model, times[window], occupation[window], p0=[1.0, chi0, 0.0])
    return float(abs(chi))


# ---------------------------------------------------------------------------
# Convenience drivers

def simulate_full(spec, params, psi0: StateVector, t_end: float, cfg: PropagatorConfig | None = None,
                  record=None, sample_every: float | None = 0.5, store_states: bool = False) -> Trajectory:
    op = full_interaction_operator(spec, params, psi0.basis)
    traj = propagate(op, psi0, t_end, cfg, record, sample_every, store_states)
    traj.meta["dropped"] = dict(psi0.basis.dropped)
    return traj


def simulate_effective(spec, params, dispersion, psi0: StateVector, t_end: float,
                       cfg: PropagatorConfig | None = None, record=None, sample_every: float | None = 0.5,
                       store_states: bool = False) -> Trajectory:
    op = build_effective_general(spec, params, dispersion, psi0.basis)
    return propagate(op, psi0, t_end, cfg, record, sample_every, store_states)
