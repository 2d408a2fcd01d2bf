"""Run configuration (flat key-value YAML) and run manifests."""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .model import SystemParams

OMEGA_L_RULES = ("fixed", "ladder", "dressed", "ridge")


@dataclass
class RunConfig:
    # model, units of g
    gamma_a: float = 0.1
    gamma_sigma: float = 0.01
    delta: float = -60.0
    omega: float = 0.0
    omega_L_detuning: float = 0.0
    # solver
    n_max: int | None = None       # default 2*N + 6
    dt: float = 0.05               # 1/g
    burn_in: float = 50.0          # 1/gamma_a
    window: float = 5.0            # 1/gamma_a
    tau_max: float = 10.0          # 1/gamma_a
    tau_bin: float = 0.5           # 1/gamma_a, click-based correlation bins
    count_window: float = 20.0     # 1/gamma_a, photon-counting windows
    # sweeps
    N: int = 2
    N_values: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    omega_grid: object = None      # list or {start, stop, num, spacing}
    omega_L_grid: object = None
    omega_L_rule: str = "dressed"
    orders: list = field(default_factory=lambda: [2, 3, 4, 5])
    # trajectories
    duration: float | None = None  # 1/gamma_a; None -> from target_bundles
    target_bundles: int = 3000
    max_duration: float = 2e8      # 1/gamma_a
    snapshot: bool = False
    snapshot_duration: float = 2.0  # 1/gamma_a
    record: str | None = None      # analyze: existing click record
    # run
    seed: int = 12345
    workers: int = 1
    g_hz: float | None = None
    figures: bool = False
    out: str = "out"

    def __post_init__(self):
        self.params()  # validates the physical fields
        if self.omega_L_rule not in OMEGA_L_RULES:
            raise ValueError(f"omega_L_rule must be one of {OMEGA_L_RULES}, got {self.omega_L_rule!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N!r}")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for name in ("dt", "window", "tau_max", "tau_bin", "count_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def truncation(self) -> int:
        return self.n_max if self.n_max is not None else 2 * self.N + 6

    def params(self, **overrides) -> SystemParams:
        values = dict(gamma_a=self.gamma_a, gamma_sigma=self.gamma_sigma, delta=self.delta,
                      omega=self.omega, omega_L_detuning=self.omega_L_detuning)
        values.update(overrides)
        return SystemParams(**values)

    def omegas(self) -> np.ndarray:
        return _grid(self.omega_grid, [self.omega])

    def detunings(self) -> np.ndarray:
        return _grid(self.omega_L_grid, [self.omega_L_detuning])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**mapping)


def _grid(spec, default) -> np.ndarray:
    if spec is None:
        return np.asarray(default, dtype=float)
    if isinstance(spec, dict):
        start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        if spec.get("spacing", "lin") == "log":
            return np.geomspace(start, stop, num)
        return np.linspace(start, stop, num)
    return np.asarray(spec, dtype=float)


def load_config(path) -> tuple[dict, str | None]:
    """Read a YAML config or a JSON run manifest; returns ``(mapping, command)``."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key-value mapping")
    if "config" in data and "tool_version" in data:
        return dict(data["config"]), data.get("command")
    return data, None


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def header_lines(config: RunConfig, command: str, extra: dict | None = None) -> list[str]:
    """``# key=value`` comment block carried by every CSV output."""
    lines = [f"# tool=nbundle {__version__}", f"# command={command}", "# units=g (rates), 1/g (model times)"]
    for k, v in config.to_dict().items():
        if k in ("out", "workers", "figures"):
            continue
        if k == "n_max":
            v = config.truncation
        lines.append(f"# {k}={json.dumps(v, sort_keys=True)}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    return lines


def write_manifest(out_dir: Path, command: str, config: RunConfig, outputs: list[Path],
                   timings: dict) -> Path:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "master_seed": int(config.seed),
        "config": config.to_dict(),
        "outputs": {p.name: sha256(p) for p in outputs if p.suffix == ".csv"},
        "figures": [p.name for p in outputs if p.suffix != ".csv"],
        "timings_s": timings,
        "python": platform.python_version(),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
