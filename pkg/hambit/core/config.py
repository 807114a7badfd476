"""
Configuration management for Hambit runs
"""

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from hambit.core.analysis import config_hash
from hambit.core.errors import ConfigError
from hambit.core.fdscheme import FDConfig
from hambit.core.hilbert import WeightFunction
from hambit.core.kernels import KernelSpec, VolatilityModel, build_kernel, build_volatility
from hambit.core.noise import LevySpec, build_noise
from hambit.core.simulate import GRAM_CONDITION_LIMIT, TruncationLevels

DEFAULT_OUT_DIR = "hambit-out"
DEFAULTS: Dict[str, Any] = {"seed": 0, "n_paths": 1000, "weight_alpha": 1.0}
# Keys that never change results and stay out of the config hash.
RUNTIME_KEYS = ("threads", "out_dir")
GRID_TOLERANCE = 1e-9


@dataclass
class RunConfig:
    """Validated, typed view of one run configuration"""

    dims: Tuple[int, int, int]
    kernel: KernelSpec
    volatility: VolatilityModel
    noise: LevySpec
    grid: FDConfig
    seed: int
    n_paths: int
    weight: WeightFunction
    out_dir: Path
    coupling: str = "independent"
    threads: Optional[int] = None
    truncation: Optional[TruncationLevels] = None
    snapshots: List[int] = field(default_factory=list)
    levels: List[Tuple[float, float]] = field(default_factory=list)
    reference: str = "mild"
    charfn_t: Optional[float] = None
    charfn_h: List[np.ndarray] = field(default_factory=list)
    projection: Optional[Dict[str, Any]] = None
    config_hash: str = ""

    @property
    def t_grid(self) -> np.ndarray:
        return self.grid.t_grid


class Config:
    """Loads, validates and builds a JSON run configuration"""

    ENV_OUT_DIR = "HAMBIT_OUT_DIR"

    def __init__(self, config_file: Optional[Path] = None, document: Optional[Dict[str, Any]] = None):
        self.config_file = Path(config_file) if config_file is not None else None
        self.schema = self._load_schema()
        self._config = copy.deepcopy(document) if document is not None else self._load_config()
        self._overridden: set = set()

    def _load_schema(self) -> Dict[str, Any]:
        """Loads the run configuration JSON schema."""
        schema_path = Path(__file__).parent.parent / "schemas" / "run_config_schema.json"
        with open(schema_path, "r") as f:
            return json.load(f)

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from file"""
        if self.config_file is None:
            raise ConfigError("config", "no configuration file given")
        try:
            with open(self.config_file) as f:
                document = json.load(f)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {self.config_file}")
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON in {self.config_file} (line {e.lineno}): {e.msg}")
        except OSError as e:
            raise ConfigError("config", f"cannot read {self.config_file}: {e}")
        if not isinstance(document, dict):
            raise ConfigError("config", "top level must be an object")
        return document

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value"""
        # Only the output directory may come from the environment; --out still wins
        if key == "out_dir" and key not in self._overridden:
            env_value = os.getenv(self.ENV_OUT_DIR)
            if env_value:
                return env_value
        return self._config.get(key, DEFAULTS.get(key, default))

    def override(self, **values: Any):
        """Apply command-line overrides; None leaves the file value in place"""
        for key, value in values.items():
            if value is not None:
                self._config[key] = value
                self._overridden.add(key)

    @property
    def document(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config)

    @property
    def hash(self) -> str:
        effective = {k: v for k, v in self._config.items() if k not in RUNTIME_KEYS}
        for key, value in DEFAULTS.items():
            effective.setdefault(key, value)
        return config_hash(effective)

    def validate_setup(self, command: Optional[str] = None,
                       required_sections: Sequence[str] = ()) -> Tuple[bool, str]:
        """Validate without raising"""
        try:
            self.validate(command, required_sections)
        except ConfigError as e:
            return False, str(e)
        return True, "Configuration is valid"

    def validate(self, command: Optional[str] = None, required_sections: Sequence[str] = ()):
        """Schema and semantic validation; raises ConfigError naming the field

        `required_sections` are the sections the command's experiment reads
        (ExperimentPlugin.required_sections).
        """
        try:
            jsonschema.validate(instance=self._config, schema=self.schema)
        except jsonschema.exceptions.ValidationError as e:
            path = ".".join(str(part) for part in e.absolute_path) or "config"
            raise ConfigError(path, e.message)
        for section in required_sections:
            if section not in self._config:
                raise ConfigError(section, f"section required for the {command} command")
        self._check_dimensions()
        self._check_grid()
        if command == "simulate":
            self._check_simulate()
        elif command == "converge":
            self._check_convergence()
        elif command == "charfn":
            self._check_charfn()
        elif command == "project":
            self._check_projection()

    def _dims(self) -> Tuple[int, int, int]:
        spaces = self._config["spaces"]
        return spaces["dim_u"], spaces["dim_v"], spaces["dim_h"]

    def _check_dimensions(self):
        dim_u, dim_v, dim_h = self._dims()
        for i, component in enumerate(self._config["kernel"]["components"]):
            where = f"kernel.components.{i}"
            B = component["B"]
            if len({len(row) for row in B}) != 1:
                raise ConfigError(f"{where}.B", "rows have different lengths")
            if (len(B), len(B[0])) != (dim_h, dim_v):
                raise ConfigError(f"{where}.B", f"shape {len(B)}x{len(B[0])} does not match dim_h x dim_v = {dim_h}x{dim_v}")
            if component.get("phi", 0) >= dim_u:
                raise ConfigError(f"{where}.phi", f"index {component['phi']} outside U of dimension {dim_u}")
            kind = component["g"]["type"]
            if kind in ("exponential", "shifted_exponential") and "kappa" not in component["g"]:
                raise ConfigError(f"{where}.g.kappa", f"required for {kind} kernels")
        self._check_noise(self._config["noise"], "noise", dim_v)
        self._check_volatility(dim_u)

    def _check_noise(self, section: Dict[str, Any], where: str, dim: int):
        if section["type"] == "wiener":
            key = "eigenvalues"
        else:
            key = "jump_eigenvalues"
            if "intensity" not in section:
                raise ConfigError(f"{where}.intensity", "required for compound Poisson noise")
        if key not in section:
            raise ConfigError(f"{where}.{key}", f"required for {section['type']} noise")
        if len(section[key]) != dim:
            raise ConfigError(f"{where}.{key}", f"has {len(section[key])} entries, expected {dim}")

    def _check_volatility(self, dim_u: int):
        vol = self._config["volatility"]
        kind = vol["type"]
        if kind == "constant":
            if "sigma0" not in vol:
                raise ConfigError("volatility.sigma0", "required for constant volatility")
            if len(vol["sigma0"]) != dim_u:
                raise ConfigError("volatility.sigma0", f"has {len(vol['sigma0'])} entries, expected {dim_u}")
        elif kind == "scalar_lss":
            for key in ("rho", "driver"):
                if key not in vol:
                    raise ConfigError(f"volatility.{key}", "required for scalar_lss volatility")
            self._check_noise(vol["driver"], "volatility.driver", dim_u)
        else:
            for key in ("C", "Y0"):
                if key not in vol:
                    raise ConfigError(f"volatility.{key}", "required for operator_ou volatility")
            C = np.asarray(vol["C"], dtype=float)
            Y0 = np.asarray(vol["Y0"], dtype=float)
            if C.ndim != 2 or C.shape[0] != C.shape[1]:
                raise ConfigError("volatility.C", "must be a square matrix")
            if Y0.shape != C.shape:
                raise ConfigError("volatility.Y0", f"shape {Y0.shape} does not match C {C.shape}")
            if C.shape[0] ** 2 != dim_u:
                raise ConfigError("volatility.C", f"d={C.shape[0]} requires dim_u = d^2 = {C.shape[0] ** 2}")
            if not np.allclose(Y0, Y0.T):
                raise ConfigError("volatility.Y0", "must be symmetric")
            if np.linalg.eigvalsh(Y0).min() < -1e-10:
                raise ConfigError("volatility.Y0", "must be positive semidefinite")

    def _check_grid(self):
        grid = self._config["grid"]
        if grid["dt"] > grid["dx"] * (1.0 + 1e-12):
            raise ConfigError("grid.dt", f"CFL condition violated: dt={grid['dt']!r} > dx={grid['dx']!r}")

    def _check_on_grid(self, where: str, t: float):
        grid = self._config["grid"]
        k = t / grid["dt"]
        if abs(k - round(k)) > GRID_TOLERANCE * max(1.0, k) or round(k) > grid["n_steps"]:
            raise ConfigError(where, f"t={t} is not a point of the time grid")

    def _check_simulate(self):
        dims = self._dims()
        truncation = self._config.get("truncation", {})
        for name, dim in zip("NMK", dims):
            if truncation.get(name, dim) > dim:
                raise ConfigError(f"truncation.{name}", f"level {truncation[name]} exceeds dimension {dim}")
        for n in self._config.get("simulate", {}).get("snapshots", []):
            if n > self._config["grid"]["n_steps"]:
                raise ConfigError("simulate.snapshots", f"index {n} beyond n_steps")

    def _check_convergence(self):
        section = self._config.get("convergence")
        if section is None:
            return
        levels = section["levels"]
        if len(levels) < 3:
            raise ConfigError("convergence.levels", f"need at least 3 levels, got {len(levels)}")
        grid = self._config["grid"]
        horizon = grid["dt"] * grid["n_steps"]
        extent = grid["dx"] * grid["n_nodes"]
        dt_min = min(dt for _, dt in levels)
        for i, (dx, dt) in enumerate(levels):
            where = f"convergence.levels.{i}"
            if dt > dx * (1.0 + 1e-12):
                raise ConfigError(where, f"CFL condition violated: dt={dt!r} > dx={dx!r}")
            for total, step in ((horizon, dt), (extent, dx), (dt, dt_min)):
                ratio = total / step
                if abs(ratio - round(ratio)) > GRID_TOLERANCE * max(1.0, ratio):
                    raise ConfigError(where, f"{total} is not a multiple of {step}")

    def _check_charfn(self):
        if self._config["volatility"].get("coupling", "independent") == "shared":
            raise ConfigError("volatility.coupling", "the characteristic functional needs sigma independent of L")
        section = self._config.get("charfn")
        if section is None:
            return
        dim_h = self._dims()[2]
        for i, h in enumerate(section["h"]):
            if len(h) != dim_h:
                raise ConfigError(f"charfn.h.{i}", f"has {len(h)} entries, expected {dim_h}")
        if "t" in section:
            self._check_on_grid("charfn.t", section["t"])

    def _check_projection(self):
        section = self._config.get("projection")
        if section is None:
            return
        dim_h = self._dims()[2]
        xi = np.asarray(section["xi"], dtype=float)
        if xi.ndim != 2 or xi.shape[1] != dim_h:
            raise ConfigError("projection.xi", f"directions must have {dim_h} entries each")
        condition = float(np.linalg.cond(xi @ xi.T))
        if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
            raise ConfigError("projection.xi", f"Gram matrix condition number {condition:.6g} exceeds {GRAM_CONDITION_LIMIT:.0e}")
        if section.get("path", 0) >= int(self.get("n_paths")):
            raise ConfigError("projection.path", f"path {section['path']} not among the {self.get('n_paths')} sampled paths")
        if section["s"] > section["t"]:
            raise ConfigError("projection.s", f"s={section['s']} must not exceed t={section['t']}")
        self._check_on_grid("projection.t", section["t"])
        self._check_on_grid("projection.s", section["s"])

    def build(self, command: Optional[str] = None, required_sections: Sequence[str] = ()) -> RunConfig:
        """Validate, then construct the typed run configuration"""
        self.validate(command, required_sections)
        dims = self._dims()
        grid = self._config["grid"]
        try:
            kernel = build_kernel(self._config["kernel"], dims[0])
            volatility = build_volatility(self._config["volatility"])
            noise = build_noise(self._config["noise"])
            fd = FDConfig(dt=grid["dt"], dx=grid["dx"], N=grid["n_steps"], J=grid["n_nodes"])
        except ValueError as e:
            raise ConfigError("config", str(e))
        truncation = self._config.get("truncation", {})
        levels = TruncationLevels(
            truncation.get("N", dims[0]), truncation.get("M", dims[1]), truncation.get("K", dims[2])
        )
        convergence = self._config.get("convergence", {})
        charfn = self._config.get("charfn", {})
        return RunConfig(
            dims=dims,
            kernel=kernel,
            volatility=volatility,
            noise=noise,
            grid=fd,
            seed=int(self.get("seed")),
            n_paths=int(self.get("n_paths")),
            weight=WeightFunction(float(self.get("weight_alpha"))),
            out_dir=Path(self.get("out_dir") or DEFAULT_OUT_DIR),
            coupling=self._config["volatility"].get("coupling", "independent"),
            threads=self._config.get("threads"),
            truncation=levels,
            snapshots=list(self._config.get("simulate", {}).get("snapshots", [])),
            levels=[tuple(level) for level in convergence.get("levels", [])],
            reference=convergence.get("reference", "mild"),
            charfn_t=charfn.get("t"),
            charfn_h=[np.asarray(h, dtype=float) for h in charfn.get("h", [])],
            projection=self._config.get("projection"),
            config_hash=self.hash,
        )
