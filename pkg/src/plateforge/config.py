"""Run configuration: TOML in, frozen dataclasses out, unknown keys rejected."""

from dataclasses import asdict, dataclass, field, fields
import hashlib
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataset import StrikeConfig
from .errors import ConfigurationError
from .fileformat import canonical_json
from .plate import PlateParams

SEED_ENV = "PLATEFORGE_SEED"


@dataclass(frozen=True)
class PlateSection:
    cnl_over_s0: float
    rho2: float = 0.2622
    D: float = 2.198e-3
    T0: float = 800.0
    d1: float = 0.5
    d3: float = 0.005
    Lx: float = 0.4
    Ly: float = 0.36
    Nx: int = 41
    Ny: int = 37
    fs: float = 16000.0


@dataclass(frozen=True)
class SolverSection:
    oversample: int = 8
    Mx: int = 15
    My: int = 15


@dataclass(frozen=True)
class StrikeSection:
    vmax_range: tuple = (5.0, 25.0)
    sigma_range: tuple = (0.02, 0.1)
    center_margin: float = 0.05


@dataclass(frozen=True)
class DatasetSection:
    count: int = 100
    duration: float = 1.0
    dtype: str = "f32"


@dataclass(frozen=True)
class SurrogateSection:
    rank: int = 450
    sub_step: int = 1
    pair_stride: int = 100
    block_lengths: tuple = (49, 199, 399)


@dataclass(frozen=True)
class EvaluationSection:
    stride: int = 100
    rollout_steps: int = 4000
    probes: tuple = ("center", "edge")
    window_len: int = 512
    hop: int = 128
    channel: str = "both"
    spectrum_channel: str = "displacement"
    spectrum_frames: int = 4000
    physical_units: bool = False


@dataclass(frozen=True)
class RunConfig:
    plate: PlateSection
    solver: SolverSection = field(default_factory=SolverSection)
    strike: StrikeSection = field(default_factory=StrikeSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seed: int = 0
    jobs: int = 0  # 0 = all available cores

    def plate_params(self):
        return PlateParams(**asdict(self.plate))

    def strike_config(self):
        s = self.strike
        return StrikeConfig(tuple(s.vmax_range), tuple(s.sigma_range), s.center_margin, self.seed)

    def to_dict(self):
        d = asdict(self)
        return _listify(d)

    def hash(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def replace(self, **sections):
        d = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                d[key] = {**d[key], **value}
            else:
                d[key] = value
        return config_from_dict(d)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


_SECTIONS = {
    "plate": PlateSection,
    "solver": SolverSection,
    "strike": StrikeSection,
    "dataset": DatasetSection,
    "surrogate": SurrogateSection,
    "evaluation": EvaluationSection,
}


def _build(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"[{where}]: {exc}") from exc


def config_from_dict(d):
    d = dict(d)
    top_known = set(_SECTIONS) | {"seed", "jobs"}
    unknown = sorted(set(d) - top_known)
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "plate" not in d or "cnl_over_s0" not in d["plate"]:
        raise ConfigurationError("[plate] cnl_over_s0 is required (0.0 for the linear plate)")
    sections = {name: _build(cls, d.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**sections, seed=int(d.get("seed", 0)), jobs=int(d.get("jobs", 0)))
    cfg.plate_params()  # validates
    return cfg


def load_config(path, env=None):
    """Parse a TOML run configuration; ``PLATEFORGE_SEED`` overrides ``seed``."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML ({exc})") from exc
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        raw["seed"] = int(env[SEED_ENV])
    return config_from_dict(raw)
