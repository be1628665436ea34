"""
ssep-lab Configuration Manager
Reads experiment configs (JSON), merging user values over built-in defaults,
validating every key, and hashing the merged result for run manifests.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Any, Optional

import psutil

from core.errors import ConfigError
from core.observables import CATALOG, Observable, observable_from_config
from core.ou_gaussian import NOISE_PREFACTORS, BandLimitedProfile
from core.torus_spectral import spectral_from_triples

log = logging.getLogger(__name__)

CONFIG_FILE = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config.json"
)

REQUIRED_KEYS = ("d", "n_list", "t", "rho0")
RUNTIME_KEYS = ("threads",)

DEFAULT_CONFIG: dict[str, Any] = {
    "zeta0": "matched_gaussian",
    "observable": "quadratic_form",
    "observable_params": {},
    "replicas": 1000,
    "master_seed": 20240101,
    "noise_prefactor": "physical",
    "K": None,
    "engine": "exact_two_point",
    "synthetic_exponent": -0.5,
    "slope_gate": None,
    "gaussian_replica_factor": 10,
    "threads": None,
    "snapshots": None,
    "ode_rtol": 1e-10,
    "ode_atol": 1e-12,
    "ode_method": "DOP853",
    "two_point_cap": 100_000,
    "diagnostic_t_grid": [0.01, 0.1, 1.0],
    "sobolev_I": 1.0,
}

ENGINES = ("monte_carlo", "exact_two_point", "exact_enumeration", "synthetic")
ZETA0_MODES = ("matched_gaussian", "deterministic")
ODE_METHODS = ("DOP853", "RK45", "RK23", "Radau", "BDF", "LSODA")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, merged experiment configuration."""

    d: int
    n_list: tuple[int, ...]
    t: float
    rho0: tuple
    zeta0: str
    observable: str
    observable_params: dict
    replicas: int
    master_seed: int
    noise_prefactor: str
    K: Optional[int]
    engine: str
    synthetic_exponent: float
    slope_gate: Optional[float]
    gaussian_replica_factor: int
    threads: Optional[int]
    snapshots: Optional[tuple[float, ...]]
    ode_rtol: float
    ode_atol: float
    ode_method: str
    two_point_cap: int
    diagnostic_t_grid: tuple[float, ...]
    sobolev_I: float

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @cached_property
    def profile(self) -> BandLimitedProfile:
        return BandLimitedProfile(spectral_from_triples(self.d, self.rho0))

    def build_observable(self, n: Optional[int] = None) -> Observable:
        return observable_from_config(self.observable, self.observable_params, self.d, self.truncation(n) if n else None)

    @property
    def prefactor(self) -> float:
        return NOISE_PREFACTORS[self.noise_prefactor]

    @property
    def gate(self) -> float:
        """Slope threshold; defaults to 0.9 of the predicted exponent -(d/2 ^ 1)."""
        if self.slope_gate is not None:
            return self.slope_gate
        return -0.9 * min(self.d / 2.0, 1.0)

    @property
    def worker_count(self) -> int:
        return self.threads or psutil.cpu_count(logical=False) or 1

    @property
    def snapshot_times(self) -> tuple[float, ...]:
        return self.snapshots if self.snapshots is not None else (self.t,)

    def truncation(self, n: int) -> int:
        """Gaussian-side mode truncation at lattice parameter n (K = n unless fixed)."""
        return self.K if self.K is not None else n

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return parse_config({**self.to_dict(), **changes})


def config_hash(config: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON; independent of key order and of the worker count."""
    identity = {k: v for k, v in config.items() if k not in RUNTIME_KEYS}
    canonical = json.dumps(identity, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def parse_config(raw: dict[str, Any], text: Optional[str] = None) -> ExperimentConfig:
    """Merge ``raw`` over DEFAULT_CONFIG and validate; raises ConfigError."""
    def fail(key: str, message: str):
        raise ConfigError(message, key=key, line=_line_of(text, key))

    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in DEFAULT_CONFIG and key not in REQUIRED_KEYS:
            fail(key, "unknown key")
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError("missing required key", key=key)
    merged = {**DEFAULT_CONFIG, **raw}

    def integer(key: str, minimum: int, optional: bool = False) -> Optional[int]:
        value = merged[key]
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            fail(key, f"expected an integer >= {minimum}, got {value!r}")
        return value

    def number(key: str, minimum: Optional[float] = None, optional: bool = False, strict: bool = False) -> Optional[float]:
        value = merged[key]
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(key, f"expected a number, got {value!r}")
        if minimum is not None and (value < minimum or (strict and value == minimum)):
            fail(key, f"expected a number {'>' if strict else '>='} {minimum}, got {value!r}")
        return float(value)

    def choice(key: str, options: tuple) -> str:
        if merged[key] not in options:
            fail(key, f"expected one of {', '.join(options)}, got {merged[key]!r}")
        return merged[key]

    def number_list(key: str, optional: bool = False) -> Optional[tuple[float, ...]]:
        value = merged[key]
        if value is None and optional:
            return None
        if not isinstance(value, list) or not value:
            fail(key, f"expected a non-empty list of numbers, got {value!r}")
        out = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)) or item < 0:
                fail(key, f"expected non-negative numbers, got {item!r}")
            out.append(float(item))
        if any(b < a for a, b in zip(out, out[1:])):
            fail(key, "times must be sorted")
        return tuple(out)

    d = integer("d", 1)
    if d not in (1, 2):
        fail("d", f"dimension must be 1 or 2, got {d}")

    n_list = merged["n_list"]
    if not isinstance(n_list, list) or not n_list:
        fail("n_list", "expected a non-empty list of integers")
    for n in n_list:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            fail("n_list", f"lattice parameters must be integers >= 1, got {n!r}")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        fail("n_list", "lattice parameters must be strictly increasing")

    rho0 = merged["rho0"]
    if not isinstance(rho0, list) or not rho0:
        fail("rho0", "expected a list of [k, amplitude, phase] triples")
    try:
        BandLimitedProfile(spectral_from_triples(d, rho0))
    except (ValueError, TypeError) as exc:
        fail("rho0", str(exc))

    params = merged["observable_params"]
    if not isinstance(params, dict):
        fail("observable_params", f"expected an object, got {params!r}")
    observable = choice("observable", CATALOG)
    try:
        observable_from_config(observable, params, d)
    except (ValueError, TypeError) as exc:
        fail("observable_params", str(exc))

    threads = integer("threads", 1, optional=True)
    cfg = ExperimentConfig(
        d=d,
        n_list=tuple(n_list),
        t=number("t", 0.0),
        rho0=tuple(tuple(x) if isinstance(x, list) else x for x in rho0),
        zeta0=choice("zeta0", ZETA0_MODES),
        observable=observable,
        observable_params=params,
        replicas=integer("replicas", 1),
        master_seed=integer("master_seed", 0),
        noise_prefactor=choice("noise_prefactor", tuple(NOISE_PREFACTORS)),
        K=integer("K", 0, optional=True),
        engine=choice("engine", ENGINES),
        synthetic_exponent=number("synthetic_exponent"),
        slope_gate=number("slope_gate", optional=True),
        gaussian_replica_factor=integer("gaussian_replica_factor", 10),
        threads=threads,
        snapshots=number_list("snapshots", optional=True),
        ode_rtol=number("ode_rtol", 0.0, strict=True),
        ode_atol=number("ode_atol", 0.0, strict=True),
        ode_method=choice("ode_method", ODE_METHODS),
        two_point_cap=integer("two_point_cap", 1),
        diagnostic_t_grid=number_list("diagnostic_t_grid"),
        sobolev_I=number("sobolev_I", d / 2.0, strict=True),
    )
    return cfg


class ConfigManager:
    """Loads one experiment config file and keeps the merged dictionary."""

    def __init__(self, path: str = CONFIG_FILE):
        self.path = path
        self._config: dict[str, Any] = {}
        self.experiment: Optional[ExperimentConfig] = None
        self.load()

    def load(self):
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {self.path}: {exc}") from exc
        try:
            saved = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
        self.experiment = parse_config(saved, text)
        self._config = self.experiment.to_dict()
        log.info("loaded config %s (hash %s)", self.path, self.config_hash()[:12])

    def save(self, path: str):
        """Write the merged config; reloading it reproduces the same hash."""
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self._config, f, indent=4, sort_keys=True)
        except OSError as exc:
            log.error("Failed to write config: %s", exc)

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(key, default)

    def get_all(self) -> dict[str, Any]:
        return dict(self._config)

    def override(self, **changes):
        """Apply CLI overrides (seed, threads) and re-validate."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if changes:
            self.experiment = parse_config({**self._config, **changes})
            self._config = self.experiment.to_dict()

    def config_hash(self) -> str:
        return config_hash(self._config)
