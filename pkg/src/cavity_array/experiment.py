"""Run orchestration and result persistence.

Every file is first written with a ``.partial`` suffix.  The suffixes are
removed together only after the whole run succeeds, and the manifest (with
sha256 checksums) is written last.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_to_dict
from .dynamics import (Trajectory, compare_models, embed_pair_state, excited_population,
                       fit_exchange_rate, level_population, photon_population, projector, propagate)
from .errors import AccuracyError, ConfigError
from .hamiltonian import (build_effective_general, effective_coefficients, full_interaction_operator,
                          validate_regime)
from .hilbert import AtomLevel, SectorSpec, StateVector, enumerate_basis
from .lattice import Dispersion, site_index
from .protocols import plan_parallel

OUTPUT_ENV = "CAVITY_ARRAY_OUTPUT_DIR"
PARTIAL = ".partial"


@dataclass
class RunManifest:
    config: dict
    version: str
    basis_dim: dict
    sector: dict
    dispersion: list
    wall_clock: float
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "version": self.version, "basis_dim": self.basis_dim,
                "sector": self.sector, "dispersion": self.dispersion,
                "wall_clock_seconds": self.wall_clock, "outputs": self.outputs}

    def verify(self, directory) -> list[str]:
        """Names of outputs that are missing or fail their checksum."""
        bad = []
        for name, digest in self.outputs.items():
            path = Path(directory) / name
            if not path.is_file() or sha256_file(path) != digest:
                bad.append(name)
        return bad


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_output_dir(cfg: ExperimentConfig, explicit=None, fallback="runs") -> Path:
    if explicit:
        return Path(explicit)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    if cfg.run is not None and cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    return Path(fallback)


class _Writer:
    """Collects ``.partial`` files and promotes them once the run completes."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.pending: list[str] = []

    def text(self, name: str, content: str) -> None:
        with open(self.directory / (name + PARTIAL), "w", newline="") as fh:
            fh.write(content)
        self.pending.append(name)

    def json(self, name: str, payload) -> None:
        self.text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def commit(self) -> dict:
        checksums = {}
        for name in self.pending:
            final = self.directory / name
            os.replace(self.directory / (name + PARTIAL), final)
            checksums[name] = sha256_file(final)
        self.pending = []
        return checksums


def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_csv(traj: Trajectory) -> str:
    names = list(traj.observables)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *names])
    for i, t in enumerate(traj.times):
        w.writerow([_fmt(t), *(_fmt(traj.observables[n][i]) for n in names)])
    return buf.getvalue()


def coefficients_csv(cfg: ExperimentConfig, dispersions) -> str:
    """Long-format table: one row per (dispersion, quantity, site pair)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dispersion", "quantity", "a_j", "a_k", "b_j", "b_k", "real", "imag", "abs"])
    params = cfg.params()
    for disp in dispersions:
        c = effective_coefficients(cfg.lattice, params, disp)
        driven = c.driven_sites()
        for s in driven:
            i = site_index(s, cfg.lattice)
            for name, value in (("epsilon", c.epsilon[i]), ("varsigma", c.varsigma[i])):
                w.writerow([disp.value, name, s.j, s.k, "", "", _fmt(value), _fmt(0.0), _fmt(abs(value))])
        for i, a in enumerate(driven):
            for b in driven[i + 1:]:
                chi = c.chi_between(a, b)
                w.writerow([disp.value, "chi", a.j, a.k, b.j, b.k,
                            _fmt(chi.real), _fmt(chi.imag), _fmt(abs(chi))])
    return buf.getvalue()


def _initial_vector(cfg: ExperimentConfig, basis) -> StateVector:
    atoms = {site: level for site, level in cfg.initial_state.atoms}
    i = basis.find(basis.state(atoms))
    if i is None:
        raise ConfigError("initial_state: configuration lies outside the simulated sector")
    amps = np.zeros(basis.dim, dtype=complex)
    amps[i] = 1.0
    return StateVector(amps, basis)


def _bell_targets(cfg: ExperimentConfig, basis) -> dict:
    """``(|fg> -+ i |gf>)/sqrt 2`` on the single protocol pair, if there is one."""
    if cfg.protocol is None or len(cfg.protocol.pairs) != 1:
        return {}
    a, b = cfg.protocol.pairs[0]
    out = {}
    for name, sign in (("bell_minus_i", -1), ("bell_plus_i", +1)):
        state = np.array([0, sign * 1j, 1, 0], dtype=complex) / np.sqrt(2)
        out[name] = embed_pair_state(state, a, b, basis)
    return out


def _observables(cfg: ExperimentConfig, basis, psi0: StateVector, full: bool) -> dict:
    wanted = cfg.run.observables
    rec = {}
    if "occupation" in wanted:
        rec["occupation"] = projector(psi0)
    if "populations" in wanted:
        for site in cfg.driven_sites():
            rec[f"pop_f_{site.j}_{site.k}"] = level_population(basis, site, AtomLevel.F)
    if full and "photons" in wanted:
        rec["photons"] = photon_population(basis)
    if full and "excited" in wanted:
        rec["excited"] = excited_population(basis)
    if "bell" in wanted:
        for name, target in _bell_targets(cfg, basis).items():
            rec[name] = projector(target)
    return rec


def _run_full(cfg: ExperimentConfig):
    init = cfg.initial_state
    sector = SectorSpec(init.excitation, init.photon_cap, init.representation)
    basis = enumerate_basis(cfg.lattice, sector)
    psi0 = _initial_vector(cfg, basis)
    op = full_interaction_operator(cfg.lattice, cfg.params(), basis)
    traj = propagate(op, psi0, cfg.run.t_end, cfg.run.propagator,
                     _observables(cfg, basis, psi0, True), cfg.run.sample_every)
    traj.meta["dropped"] = dict(basis.dropped)
    return basis, traj


def _run_effective(cfg: ExperimentConfig, dispersion: Dispersion):
    if any(level is AtomLevel.E for _, level in cfg.initial_state.atoms):
        raise ConfigError("initial_state: the effective model has no excited level E")
    sector = SectorSpec(cfg.initial_state.excitation, 0, levels=(AtomLevel.G, AtomLevel.F))
    basis = enumerate_basis(cfg.lattice, sector)
    psi0 = _initial_vector(cfg, basis)
    op = build_effective_general(cfg.lattice, cfg.params(), dispersion, basis)
    traj = propagate(op, psi0, cfg.run.t_end, cfg.run.propagator,
                     _observables(cfg, basis, psi0, False), cfg.run.sample_every)
    return basis, traj


def _effective_dispersions(cfg: ExperimentConfig) -> list[Dispersion]:
    first = cfg.lattice.dispersion
    if not cfg.run.compare_dispersions:
        return [first]
    return [first] + [d for d in Dispersion if d is not first]


def _reference_pair(cfg: ExperimentConfig):
    if cfg.protocol is not None:
        return cfg.protocol.pairs[0]
    driven = cfg.driven_sites()
    return tuple(driven[:2]) if len(driven) >= 2 else None


def comparison_summary(cfg: ExperimentConfig, full: Trajectory, effective: dict) -> dict:
    """Deviation per shared observable and effective dispersion, plus the fitted exchange rate.

    The deviation window ends at ``pi / (4 |chi_fit|)`` when the full model's
    occupation can be fitted, otherwise it spans the whole run.
    """
    summary = {"fit": None, "window_end": None, "by_dispersion": {}, "winner": None}
    window = None
    if "occupation" in full.observables:
        try:
            chi_fit = fit_exchange_rate(full.times, full["occupation"])
            window = float(np.pi / (4 * chi_fit))
            summary["fit"] = {"chi_abs": chi_fit, "first_half_crossing": window}
        except (ValueError, RuntimeError) as exc:
            summary["fit"] = {"error": str(exc)}
    summary["window_end"] = window
    pair = _reference_pair(cfg)
    scores = {}
    for disp, traj in effective.items():
        row = {"deviations": {}}
        if pair is not None:
            chi = effective_coefficients(cfg.lattice, cfg.params(), disp).chi_between(*pair)
            row["predicted_chi_abs"] = float(abs(chi))
            row["predicted_half_crossing"] = float(np.pi / (4 * abs(chi))) if chi != 0 else None
            if summary["fit"] and "chi_abs" in summary["fit"] and chi != 0:
                row["fit_over_predicted"] = summary["fit"]["chi_abs"] / float(abs(chi))
        for name in full.observables:
            if name in traj.observables:
                row["deviations"][name] = compare_models(full, traj, name, window).to_dict()
        summary["by_dispersion"][disp.value] = row
        if "occupation" in row["deviations"]:
            scores[disp.value] = row["deviations"]["occupation"]["max_abs"]
    if scores:
        summary["winner"] = min(scores, key=scores.get)
        summary["winner_max_occupation_deviation"] = scores[summary["winner"]]
    return summary


def run_experiment(cfg: ExperimentConfig, output_dir) -> RunManifest:
    """Execute the configured model(s) and write all outputs to ``output_dir``."""
    if cfg.run is None:
        raise ConfigError("run: block required to simulate")
    start = time.perf_counter()
    out = _Writer(Path(output_dir))
    dispersions = list(Dispersion)
    out.text("coefficients.csv", coefficients_csv(cfg, dispersions))
    out.json("regime.json", validate_regime(cfg.lattice, cfg.params(), cfg.lattice.dispersion).to_dict())
    if cfg.protocol is not None:
        p = cfg.protocol
        gates = p.gates or ([p.kind] if p.kind != "parallel" else None)
        plan = plan_parallel(p.pairs, cfg.lattice, cfg.params(), cfg.lattice.dispersion,
                             gates, p.amplitudes, p.threshold)
        out.json("plan.json", plan.to_dict())

    dims, sectors, meta = {}, {}, {}
    full_traj, eff = None, {}
    try:
        if cfg.run.model in ("full", "both"):
            basis, full_traj = _run_full(cfg)
            dims["full"] = basis.dim
            sectors["full"] = _sector_dict(basis.sector)
            meta["full"] = full_traj.meta
            out.text("trajectory_full.csv", trajectory_csv(full_traj))
        if cfg.run.model in ("effective", "both"):
            for disp in _effective_dispersions(cfg):
                basis, traj = _run_effective(cfg, disp)
                eff[disp] = traj
                dims["effective"] = basis.dim
                sectors["effective"] = _sector_dict(basis.sector)
                meta[f"effective_{disp.value}"] = traj.meta
                out.text(f"trajectory_effective_{disp.value}.csv", trajectory_csv(traj))
    except AccuracyError as exc:
        raise AccuracyError(f"run with N={cfg.lattice.N}, t_end={cfg.run.t_end}, "
                            f"step={cfg.run.propagator.step}: {exc}") from exc
    if full_traj is not None and eff:
        out.json("comparison.json", comparison_summary(cfg, full_traj, eff))
    out.json("propagation.json", meta)
    checksums = out.commit()

    manifest = RunManifest(config_to_dict(cfg), __version__, dims, sectors,
                           [d.value for d in (eff or [cfg.lattice.dispersion])],
                           time.perf_counter() - start, checksums)
    final = _Writer(Path(output_dir))
    final.json("manifest.json", manifest.to_dict())
    final.commit()
    return manifest


def _sector_dict(sector: SectorSpec) -> dict:
    return {"total_excitation": sector.total_excitation, "photon_cap": sector.photon_cap,
            "representation": sector.representation.value,
            "levels": [level.name.lower() for level in sector.levels]}
