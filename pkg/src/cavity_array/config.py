"""YAML experiment configuration: parsing, validation and serialization.

Layout (all rates in units of g0, times in 1/g0)::

    units: g0
    lattice: {N: 4, v: 1.5, dispersion: summed_phase}
    sites:
      default: {g: 1.0, omega_rabi: 0.0, delta1: 15.0, delta2: 15.2}
      overrides:
        - {site: [1, 1], omega_rabi: 1.0}
    initial_state:
      atoms: [{site: [1, 1], level: f}]
      photons: vacuum
      photon_cap: 1
      representation: local
    run:
      model: both                # full | effective | both
      t_end: 700.0
      sample_every: 0.5
      observables: [occupation, populations, photons]
      propagator: {method: rk4, step: 0.001, tolerance: 1.0e-8, renormalize: false}
      compare_dispersions: true
      output_dir: null
    protocol:
      kind: entangle             # entangle | transfer | parallel
      pairs: [[[1, 1], [4, 4]]]
      gates: null                # per-pair kinds for parallel
      amplitudes: null           # per-pair [c0, c1]; complex as [re, im]
      threshold: 20.0
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .dynamics import Method, PropagatorConfig
from .errors import ConfigError
from .hamiltonian import SiteParams, make_params
from .hilbert import AtomLevel, PhotonRep
from .lattice import Dispersion, LatticeSpec, SiteIndex

MODELS = ("full", "effective", "both")
OBSERVABLES = ("occupation", "populations", "photons", "excited", "bell", "target")

_SCHEMA = {
    "units": None,
    "lattice": {"N": None, "v": None, "dispersion": None},
    "sites": {"default": {"g": None, "omega_rabi": None, "delta1": None, "delta2": None},
              "overrides": None},
    "initial_state": {"atoms": None, "photons": None, "photon_cap": None, "representation": None},
    "run": {"model": None, "t_end": None, "sample_every": None, "observables": None,
            "propagator": {"method": None, "step": None, "tolerance": None, "renormalize": None},
            "compare_dispersions": None, "output_dir": None},
    "protocol": {"kind": None, "pairs": None, "gates": None, "amplitudes": None, "threshold": None},
}
_SITE_FIELDS = ("g", "omega_rabi", "delta1", "delta2")


@dataclass(frozen=True)
class SiteOverride:
    site: SiteIndex
    g: float | None = None
    omega_rabi: float | None = None
    delta1: float | None = None
    delta2: float | None = None

    def apply(self, default: SiteParams) -> SiteParams:
        changes = {name: getattr(self, name) for name in _SITE_FIELDS if getattr(self, name) is not None}
        return replace(default, **changes)


@dataclass(frozen=True)
class InitialStateConfig:
    atoms: tuple[tuple[SiteIndex, AtomLevel], ...] = ()
    photon_cap: int = 1
    representation: PhotonRep = PhotonRep.LOCAL

    @property
    def excitation(self) -> int:
        return sum(level.weight for _, level in self.atoms)


@dataclass(frozen=True)
class RunConfig:
    t_end: float
    model: str = "both"
    sample_every: float = 0.5
    observables: tuple[str, ...] = ("occupation", "populations", "photons")
    propagator: PropagatorConfig = PropagatorConfig()
    compare_dispersions: bool = True
    output_dir: str | None = None


@dataclass(frozen=True)
class ProtocolConfig:
    kind: str
    pairs: tuple[tuple[SiteIndex, SiteIndex], ...]
    gates: tuple[str, ...] | None = None
    amplitudes: tuple[tuple[complex, complex], ...] | None = None
    threshold: float = 20.0


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeSpec
    default_site: SiteParams = SiteParams()
    overrides: tuple[SiteOverride, ...] = ()
    initial_state: InitialStateConfig = InitialStateConfig()
    run: RunConfig | None = None
    protocol: ProtocolConfig | None = None
    units: str = "g0"

    def params(self) -> tuple[SiteParams, ...]:
        return make_params(self.lattice, self.default_site,
                           {o.site: o.apply(self.default_site) for o in self.overrides})

    def driven_sites(self) -> list[SiteIndex]:
        return [site for site, p in zip(self.lattice.sites(), self.params()) if p.driven]


# ---------------------------------------------------------------------------
# parsing

def _unknown_keys(data, schema, prefix="") -> list[str]:
    out = []
    if not isinstance(data, dict) or schema is None:
        return out
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            out.append(path)
        else:
            out.extend(_unknown_keys(value, schema[key], path + "."))
    return out


def _require(block: dict, key: str, path: str):
    if not isinstance(block, dict) or key not in block or block[key] is None:
        raise ConfigError(f"{path}.{key}: required key missing")
    return block[key]


def _number(value, path: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _complex(value, path: str) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(_number(value[0], path), _number(value[1], path))
    return complex(_number(value, path))


def _site(value, spec: LatticeSpec, path: str) -> SiteIndex:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: a site is a [j, k] pair, got {value!r}")
    j, k = (_number(x, path, int) for x in value)
    if not (1 <= j <= spec.N and 1 <= k <= spec.N):
        raise ConfigError(f"{path}: site ({j},{k}) is not on the {spec.N}x{spec.N} lattice")
    return SiteIndex(j, k)


def _site_params(block: dict, path: str, base: SiteParams) -> dict:
    out = {}
    for name in _SITE_FIELDS:
        if name in block and block[name] is not None:
            out[name] = _number(block[name], f"{path}.{name}")
            if name in ("g", "omega_rabi") and out[name] < 0:
                raise ConfigError(f"{path}.{name}: must be non-negative")
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = _unknown_keys(data, _SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    units = data.get("units", "g0")
    if units != "g0":
        raise ConfigError(f"units: only 'g0' is supported, got {units!r}")

    lat = _require(data, "lattice", "config")
    N = _number(_require(lat, "N", "lattice"), "lattice.N", int)
    if N < 1:
        raise ConfigError(f"lattice.N: must be >= 1, got {N}")
    v = _number(_require(lat, "v", "lattice"), "lattice.v")
    try:
        dispersion = Dispersion(lat.get("dispersion") or Dispersion.SUMMED_PHASE)
    except ValueError:
        raise ConfigError(f"lattice.dispersion: expected one of "
                          f"{[d.value for d in Dispersion]}, got {lat.get('dispersion')!r}") from None
    spec = LatticeSpec(N, v, dispersion)

    sites = data.get("sites") or {}
    default = SiteParams(**_site_params(sites.get("default") or {}, "sites.default", SiteParams()))
    overrides = []
    for i, entry in enumerate(sites.get("overrides") or []):
        path = f"sites.overrides[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: expected a mapping")
        extra = set(entry) - {"site", *_SITE_FIELDS}
        if extra:
            raise ConfigError(f"unknown keys: {', '.join(f'{path}.{k}' for k in sorted(extra))}")
        site = _site(_require(entry, "site", path), spec, f"{path}.site")
        overrides.append(SiteOverride(site, **_site_params(entry, path, default)))
    seen = [o.site for o in overrides]
    if len(set(seen)) != len(seen):
        raise ConfigError("sites.overrides: a site is listed more than once")

    init = data.get("initial_state") or {}
    atoms = []
    for i, entry in enumerate(init.get("atoms") or []):
        path = f"initial_state.atoms[{i}]"
        if not isinstance(entry, dict) or set(entry) - {"site", "level"}:
            raise ConfigError(f"{path}: expected {{site, level}}")
        site = _site(_require(entry, "site", path), spec, f"{path}.site")
        try:
            level = AtomLevel.parse(_require(entry, "level", path))
        except (KeyError, ValueError):
            raise ConfigError(f"{path}.level: expected g, f or e, got {entry['level']!r}") from None
        if level is not AtomLevel.G:
            atoms.append((site, level))
    photons = init.get("photons", "vacuum")
    if photons != "vacuum":
        raise ConfigError(f"initial_state.photons: only 'vacuum' is supported, got {photons!r}")
    cap = _number(init.get("photon_cap", 1), "initial_state.photon_cap", int)
    if cap < 0:
        raise ConfigError("initial_state.photon_cap: must be >= 0")
    try:
        rep = PhotonRep(init.get("representation") or "local")
    except ValueError:
        raise ConfigError(f"initial_state.representation: expected local or momentum") from None

    protocol = None
    if data.get("protocol") is not None:
        protocol = _parse_protocol(data["protocol"], spec)

    cfg = ExperimentConfig(spec, default, tuple(overrides), None, None, protocol, units)
    if not atoms:
        start = protocol.pairs[0][0] if protocol else (cfg.driven_sites() or [None])[0]
        if start is not None:
            atoms = [(SiteIndex(*start), AtomLevel.F)]
    atoms.sort()
    if len({site for site, _ in atoms}) != len(atoms):
        raise ConfigError("initial_state.atoms: a site is listed more than once")
    initial = InitialStateConfig(tuple(atoms), cap, rep)

    run = None
    if data.get("run") is not None:
        run = _parse_run(data["run"])
    return ExperimentConfig(spec, default, tuple(overrides), initial, run, protocol, units)


def _parse_run(block) -> RunConfig:
    if not isinstance(block, dict):
        raise ConfigError("run: expected a mapping")
    t_end = _number(_require(block, "t_end", "run"), "run.t_end")
    if not t_end > 0:
        raise ConfigError(f"run.t_end: must be positive, got {t_end}")
    model = block.get("model", "both")
    if model not in MODELS:
        raise ConfigError(f"run.model: expected exactly one of {MODELS}, got {model!r}")
    sample_every = _number(block.get("sample_every", 0.5), "run.sample_every")
    if not sample_every > 0:
        raise ConfigError("run.sample_every: must be positive")
    observables = tuple(block.get("observables") or RunConfig.__dataclass_fields__["observables"].default)
    bad = [o for o in observables if o not in OBSERVABLES]
    if bad:
        raise ConfigError(f"run.observables: unknown {bad}; choose from {OBSERVABLES}")
    prop = block.get("propagator") or {}
    try:
        propagator = PropagatorConfig(
            method=Method(prop.get("method", "rk4")),
            step=_number(prop.get("step", 1e-3), "run.propagator.step"),
            tolerance=_number(prop.get("tolerance", 1e-8), "run.propagator.tolerance"),
            renormalize=bool(prop.get("renormalize", False)))
    except ValueError as exc:
        raise ConfigError(f"run.propagator: {exc}") from None
    compare = block.get("compare_dispersions", True)
    if not isinstance(compare, bool):
        raise ConfigError("run.compare_dispersions: expected true or false")
    out = block.get("output_dir")
    return RunConfig(t_end, model, sample_every, observables, propagator, compare,
                     None if out is None else str(out))


def _parse_protocol(block, spec: LatticeSpec) -> ProtocolConfig:
    if not isinstance(block, dict):
        raise ConfigError("protocol: expected a mapping")
    kind = _require(block, "kind", "protocol")
    if kind not in ("entangle", "transfer", "parallel"):
        raise ConfigError(f"protocol.kind: expected entangle, transfer or parallel, got {kind!r}")
    raw_pairs = _require(block, "pairs", "protocol")
    if not isinstance(raw_pairs, list) or not raw_pairs:
        raise ConfigError("protocol.pairs: expected a non-empty list of site pairs")
    pairs = []
    for i, pair in enumerate(raw_pairs):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"protocol.pairs[{i}]: expected [[j, k], [j, k]]")
        pairs.append(tuple(_site(s, spec, f"protocol.pairs[{i}]") for s in pair))
    if kind != "parallel" and len(pairs) != 1:
        raise ConfigError(f"protocol.pairs: kind {kind!r} takes exactly one pair")
    gates = block.get("gates")
    if gates is not None:
        gates = tuple(gates)
        if len(gates) != len(pairs) or any(g not in ("entangle", "transfer") for g in gates):
            raise ConfigError("protocol.gates: one of entangle/transfer per pair")
    amplitudes = block.get("amplitudes")
    if amplitudes is not None:
        if len(amplitudes) != len(pairs):
            raise ConfigError("protocol.amplitudes: one [c0, c1] per pair")
        amplitudes = tuple((_complex(a[0], f"protocol.amplitudes[{i}]"),
                            _complex(a[1], f"protocol.amplitudes[{i}]"))
                           for i, a in enumerate(amplitudes))
        for i, (c0, c1) in enumerate(amplitudes):
            if abs(abs(c0) ** 2 + abs(c1) ** 2 - 1) > 1e-9:
                raise ConfigError(f"protocol.amplitudes[{i}]: |c0|^2 + |c1|^2 must equal 1")
    threshold = _number(block.get("threshold", 20.0), "protocol.threshold")
    return ProtocolConfig(kind, tuple(pairs), gates, amplitudes, threshold)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# serialization

def _complex_out(c: complex):
    return [c.real, c.imag]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = cfg.default_site
    out = {
        "units": cfg.units,
        "lattice": {"N": cfg.lattice.N, "v": cfg.lattice.v, "dispersion": cfg.lattice.dispersion.value},
        "sites": {
            "default": {name: getattr(d, name) for name in _SITE_FIELDS},
            "overrides": [
                {"site": list(o.site),
                 **{name: getattr(o, name) for name in _SITE_FIELDS if getattr(o, name) is not None}}
                for o in cfg.overrides],
        },
        "initial_state": {
            "atoms": [{"site": list(site), "level": level.name.lower()} for site, level in cfg.initial_state.atoms],
            "photons": "vacuum",
            "photon_cap": cfg.initial_state.photon_cap,
            "representation": cfg.initial_state.representation.value,
        },
    }
    if cfg.run is not None:
        r = cfg.run
        out["run"] = {
            "model": r.model, "t_end": r.t_end, "sample_every": r.sample_every,
            "observables": list(r.observables),
            "propagator": {"method": r.propagator.method.value, "step": r.propagator.step,
                           "tolerance": r.propagator.tolerance, "renormalize": r.propagator.renormalize},
            "compare_dispersions": r.compare_dispersions, "output_dir": r.output_dir,
        }
    if cfg.protocol is not None:
        p = cfg.protocol
        out["protocol"] = {
            "kind": p.kind, "pairs": [[list(a), list(b)] for a, b in p.pairs],
            "gates": None if p.gates is None else list(p.gates),
            "amplitudes": None if p.amplitudes is None else [[_complex_out(c0), _complex_out(c1)]
                                                            for c0, c1 in p.amplitudes],
            "threshold": p.threshold,
        }
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def set_path(data: dict, path: str, value) -> None:
    """Set a dotted key path; ``*`` fans out over list elements."""
    keys = path.split(".")

    def walk(node, i):
        key = keys[i]
        last = i == len(keys) - 1
        if key == "*":
            if not isinstance(node, list):
                raise ConfigError(f"{path}: '*' must address a list")
            for item in node:
                if last:
                    raise ConfigError(f"{path}: '*' cannot be the final key")
                walk(item, i + 1)
            return
        if isinstance(node, list):
            key = int(key)
        elif not isinstance(node, dict):
            raise ConfigError(f"{path}: cannot descend into {node!r}")
        if last:
            node[key] = value
        else:
            if isinstance(node, dict) and node.get(key) is None:
                node[key] = {}
            walk(node[key], i + 1)

    walk(data, 0)
