"""Run configuration (TOML) for the command-line pipeline."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .clustering import MODES
from .ev_data import DAY_FILTERS, SynthSpec
from .opf import OpfSettings


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed, stable across platforms and Python versions."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFF


@dataclass
class ClusteringConfig:
    mode: str = "polar"
    k: int | None = None
    k_range: tuple[int, int] | None = None
    seeds_per_k: int = 10
    day_filter: str = "weekdays"
    max_iter: int = 300
    tol: float = 1e-6


@dataclass
class OpfConfig:
    m_t: float = 1000.0
    epsilon_kw: float = 0.01
    s_base_mva: float | None = None
    v_min_pu: float | None = None
    v_max_pu: float | None = None
    exactness_tol: float = 1e-6
    loss_escalation: float = 10.0
    max_escalations: int = 8
    refine_steps: int = 4
    backend: str = "clarabel"
    backend_settings: dict = field(default_factory=dict)

    def settings(self) -> OpfSettings:
        return OpfSettings(self.backend, dict(self.backend_settings), self.exactness_tol, self.loss_escalation,
                           self.max_escalations, self.refine_steps)


@dataclass
class ScenarioConfig:
    fleet_total: int | None = None
    adoption_rate: float | None = None
    adoption_count: int | None = None
    timestep_minutes: float | None = None
    horizon: tuple[int, int] | None = None
    include_ev_baseline: bool = True

    def total_evs(self) -> int:
        if self.adoption_count is not None:
            return int(self.adoption_count)
        return int(round(self.adoption_rate * self.fleet_total))


@dataclass
class RunConfig:
    path: Path
    seed: int
    network: Path | None
    output_dir: Path
    sessions: Path | None
    synth: dict | None
    clustering: ClusteringConfig
    opf: OpfConfig
    scenario: ScenarioConfig
    raw: dict = field(repr=False, default_factory=dict)

    def synth_spec(self) -> SynthSpec:
        if self.synth is None:
            raise ConfigError("no [synth] section")
        s = self.synth
        try:
            kwargs = dict(n_users=int(s["n_users"]), days=int(s["days"]), mix={k: float(v) for k, v in s["mix"].items()},
                          seed=derive_seed(self.seed, "synth"))
            if "start_date" in s:
                kwargs["start_date"] = date.fromisoformat(str(s["start_date"]))
            spec = SynthSpec(**kwargs)
            spec.validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[synth]: {exc}") from exc
        return spec

    @property
    def clustering_seed(self) -> int:
        return derive_seed(self.seed, "clustering")

    def echo(self) -> dict:
        """Config content for result metadata (paths as written in the file)."""
        return self.raw


def _positive(name, v):
    if v is not None and not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
        raise ConfigError(f"{name} must be a positive number, got {v!r}")


def _pair(name, v):
    if v is None:
        return None
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(i, int) for i in v)):
        raise ConfigError(f"{name} must be a list of two integers")
    return (v[0], v[1])


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def rel(p):
        return None if p is None else (base / p).resolve()

    paths = raw.get("paths", {})
    sessions = paths.get("sessions")
    synth = raw.get("synth")
    if (sessions is None) == (synth is None):
        raise ConfigError("give exactly one of paths.sessions or a [synth] section")

    c = dict(raw.get("clustering", {}))
    known_c = {"mode", "k", "k_range", "seeds_per_k", "day_filter", "max_iter", "tol"}
    if set(c) - known_c:
        raise ConfigError(f"unknown [clustering] keys: {sorted(set(c) - known_c)}")
    clustering = ClusteringConfig(**{**c, "k_range": _pair("clustering.k_range", c.get("k_range"))})
    if (clustering.k is None) == (clustering.k_range is None):
        raise ConfigError("give exactly one of clustering.k or clustering.k_range")
    if clustering.mode not in MODES:
        raise ConfigError(f"clustering.mode must be one of {MODES}")
    if clustering.day_filter not in DAY_FILTERS:
        raise ConfigError(f"clustering.day_filter must be one of {DAY_FILTERS}")
    if clustering.k_range is not None and not 2 <= clustering.k_range[0] <= clustering.k_range[1]:
        raise ConfigError(f"clustering.k_range must satisfy 2 <= lo <= hi, got {list(clustering.k_range)}")
    if clustering.k is not None and clustering.k < 1:
        raise ConfigError("clustering.k must be >= 1")
    for name in ("seeds_per_k", "max_iter", "tol"):
        _positive(f"clustering.{name}", getattr(clustering, name))

    o = dict(raw.get("opf", {}))
    backend = dict(o.pop("backend", {}))
    known_o = set(OpfConfig.__dataclass_fields__) - {"backend", "backend_settings"}
    if set(o) - known_o:
        raise ConfigError(f"unknown [opf] keys: {sorted(set(o) - known_o)}")
    opf = OpfConfig(**o, backend=backend.pop("name", "clarabel"), backend_settings=backend)
    for name in ("m_t", "epsilon_kw", "s_base_mva", "v_min_pu", "v_max_pu", "exactness_tol", "loss_escalation"):
        _positive(f"opf.{name}", getattr(opf, name))
    for name, v in backend.items():
        _positive(f"opf.backend.{name}", v)
    if opf.max_escalations < 0 or opf.refine_steps < 0:
        raise ConfigError("opf.max_escalations and opf.refine_steps must be >= 0")

    s = dict(raw.get("scenario", {}))
    known_s = set(ScenarioConfig.__dataclass_fields__)
    if set(s) - known_s:
        raise ConfigError(f"unknown [scenario] keys: {sorted(set(s) - known_s)}")
    scenario = ScenarioConfig(**{**s, "horizon": _pair("scenario.horizon", s.get("horizon"))})
    if scenario.adoption_count is None:
        if scenario.adoption_rate is None or scenario.fleet_total is None:
            if s:
                raise ConfigError("scenario needs adoption_count, or adoption_rate with fleet_total")
        elif not 0 < scenario.adoption_rate <= 1 or scenario.fleet_total < 0:
            raise ConfigError("scenario.adoption_rate must be in (0, 1] and fleet_total >= 0")
    elif scenario.adoption_count < 0:
        raise ConfigError("scenario.adoption_count must be >= 0")
    _positive("scenario.timestep_minutes", scenario.timestep_minutes)

    seed = raw.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(
        path=path,
        seed=seed,
        network=rel(paths.get("network")),
        output_dir=rel(paths.get("output_dir", "out")),
        sessions=rel(sessions),
        synth=synth,
        clustering=clustering,
        opf=opf,
        scenario=scenario,
        raw={**raw, "seed": seed},
    )


def config_summary(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "clustering": asdict(cfg.clustering), "opf": asdict(cfg.opf), "scenario": asdict(cfg.scenario)}
