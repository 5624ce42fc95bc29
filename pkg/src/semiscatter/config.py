"""Experiment configuration: dataclasses, YAML/JSON loading, canonical hashing."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .potential import PotentialSpec

KINDS = ("converge", "decouple", "classical_table", "riccati_report", "morawetz_report", "envelope_diag",
         "semiclassical")


@dataclass(frozen=True)
class PacketConfig:
    """Incoming (or initial, for ``decouple``) phase-space point and Gaussian profile.

    The profile is ``(pi w^2)^(-d/4) exp(-|y|^2 / (2 w^2) + i phase)``.
    """

    q: tuple[float, ...]
    p: tuple[float, ...]
    width: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if len(self.q) != len(self.p):
            raise ValueError("packet q and p must have the same dimension")
        if not self.width > 0:
            raise ValueError("packet width must be positive")


@dataclass(frozen=True)
class GridConfig:
    N: int = 1024
    L: float = 32.0


@dataclass(frozen=True)
class TimeConfig:
    """``T`` is the starting horizon (solves begin at ``-T``); ``t_end`` defaults to ``T``."""

    T: float = 10.0
    t_end: float | None = None
    dt: float = 0.01
    n_samples: int = 201
    ladder: tuple[float, ...] = (5.0, 10.0, 20.0, 40.0)

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(float(v) for v in self.ladder))

    @property
    def end(self) -> float:
        return self.T if self.t_end is None else float(self.t_end)


@dataclass(frozen=True)
class Tolerances:
    ode: float = 1e-11
    cauchy: float = 1e-4
    init_phase: float = 0.5
    floor: float = 1e-9
    boundary_mass: float = 1e-8


@dataclass(frozen=True)
class Targets:
    """Pass/fail targets evaluated by the experiments (``None`` disables a target)."""

    slope: float | None = None
    slope_tol: float = 0.15
    min_slope: float | None = None
    floor_control: bool = False
    monotone: bool = False
    min_ratio: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    packets: tuple[PacketConfig, ...] = ()
    eps: tuple[float, ...] = ()
    alpha: float | None = None
    sigma: float = 1.0
    dim: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)
    targets: Targets = field(default_factory=Targets)
    options: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "packets", tuple(self.packets))
        if any(not 0 < e <= 1 for e in eps):
            raise ValueError("every eps must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps list must be strictly decreasing")
        if self.potential.dim != self.dim:
            raise ValueError(f"potential dimension {self.potential.dim} differs from dim={self.dim}")
        for pk in self.packets:
            if len(pk.q) != self.dim:
                raise ValueError("packet dimension differs from dim")
        if self.kind == "decouple":
            if len(self.packets) < 2:
                raise ValueError("decoupling needs at least two packets")
            pts = [pk.q + pk.p for pk in self.packets]
            if len(set(pts)) != len(pts):
                raise ValueError("decoupling packets must be pairwise distinct in phase space")
        if self.alpha is not None and self.alpha < self.alpha_c - 1e-12:
            raise ValueError(f"alpha={self.alpha} is below the critical exponent {self.alpha_c}")

    @property
    def alpha_c(self) -> float:
        return 1.0 + self.dim * self.sigma / 2.0

    @property
    def alpha_value(self) -> float:
        return self.alpha_c if self.alpha is None else float(self.alpha)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "potential": self.potential.to_dict(),
            "packets": [asdict(p) for p in self.packets],
            "eps": list(self.eps),
            "alpha": self.alpha,
            "sigma": self.sigma,
            "dim": self.dim,
            "grid": asdict(self.grid),
            "time": asdict(self.time),
            "tolerances": asdict(self.tolerances),
            "targets": asdict(self.targets),
            "options": dict(self.options),
            "output_dir": self.output_dir,
        }
        return _jsonable(out)

    def hash(self) -> str:
        return config_hash(self)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 over the canonical JSON of every semantic field (the output directory is excluded)."""
    data = cfg.to_dict()
    data.pop("output_dir", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def _build(cls, data: dict | None):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    dim = int(data.get("dim", 1))
    pot = dict(data.get("potential") or {})
    pot.setdefault("dim", dim)
    if "mu" in pot:
        pot["mu"] = _float(pot["mu"])
    for key in ("amplitude", "width"):
        if key in pot:
            pot[key] = float(pot[key])
    potential = _build(PotentialSpec, pot)
    packets = tuple(_build(PacketConfig, p) for p in data.get("packets") or ())
    time_cfg = dict(data.get("time") or {})
    if "ladder" in time_cfg:
        time_cfg["ladder"] = tuple(time_cfg["ladder"])
    return ExperimentConfig(
        kind=data["kind"],
        potential=potential,
        packets=packets,
        eps=tuple(data.get("eps") or ()),
        alpha=None if data.get("alpha") is None else float(data["alpha"]),
        sigma=float(data.get("sigma", 1.0)),
        dim=dim,
        grid=_build(GridConfig, data.get("grid")),
        time=_build(TimeConfig, time_cfg),
        tolerances=_build(Tolerances, data.get("tolerances")),
        targets=_build(Targets, data.get("targets")),
        options=dict(data.get("options") or {}),
        output_dir=str(data.get("output_dir", "results")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML document (``.yaml``/``.yml``) or its JSON mirror (``.json``)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        import yaml

        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data)


def gaussian_profile(packet: PacketConfig, grid):
    from .numerics import ComplexField

    d = grid.dim
    w = packet.width
    vals = (math.pi * w * w) ** (-d / 4.0) * np.exp(-0.5 * grid.radius_sq / (w * w) + 1j * packet.phase)
    return ComplexField(grid, vals.astype(complex), 0.0)
