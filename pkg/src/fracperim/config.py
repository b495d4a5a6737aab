"""Run configuration: typed schema, defaults, YAML round trip.

The defaults reproduce the reduced-scale reference experiment (n = 16,
alpha = 0.5, nu = 1/25, eta = 5e-5, start from the empty control).
Validation errors always name the offending field path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import yaml

from .kernel import QuadratureSpec


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


@dataclass(frozen=True)
class TargetSpec:
    """Tracking target: the state generated by a node-sampled disk source."""

    kind: str = "disk"
    center: tuple = (0.5, 0.5)
    radius: float = 0.3

    def validate(self, path: str) -> None:
        if self.kind != "disk":
            raise ConfigError(f"{path}.kind: only 'disk' targets are defined")
        if len(self.center) != 2:
            raise ConfigError(f"{path}.center: need two coordinates")
        if self.radius < 0:
            raise ConfigError(f"{path}.radius: must be nonnegative")


@dataclass(frozen=True)
class ProblemConfig:
    nu: float = 1.0 / 25.0
    eta: float = 5e-5
    alpha: object = 0.5  # float in (0,1), or the string "limit"
    labels: tuple = (0, 1)
    target: TargetSpec = field(default_factory=TargetSpec)

    @property
    def limit_mode(self) -> bool:
        return self.alpha == "limit"

    def validate(self, path: str = "problem") -> None:
        if not self.nu > 0:
            raise ConfigError(f"{path}.nu: must be positive")
        if self.eta < 0:
            raise ConfigError(f"{path}.eta: must be nonnegative")
        if not self.limit_mode:
            try:
                a = float(self.alpha)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{path}.alpha: expected a number in (0,1) or 'limit'"
                ) from None
            if not 0 < a < 1:
                raise ConfigError(f"{path}.alpha: {a} outside (0,1)")
        if tuple(self.labels) != (0, 1):
            raise ConfigError(f"{path}.labels: only the binary set (0, 1) is supported")
        self.target.validate(f"{path}.target")


@dataclass(frozen=True)
class DiscretizationConfig:
    n: int = 16
    rho: int = 4
    exterior_band: int | None = None  # None: just wide enough for the kernel

    def validate(self, path: str = "discretization") -> None:
        if self.n < 2:
            raise ConfigError(f"{path}.n: need at least 2 cells per side")
        if self.rho < 2:
            raise ConfigError(f"{path}.rho: PDE refinement must be >= 2")
        if self.exterior_band is not None and self.exterior_band < 0:
            raise ConfigError(f"{path}.exterior_band: must be >= 0")


@dataclass(frozen=True)
class KernelConfig:
    truncation_multiplier: float = 7.0  # truncation radius in units of h
    gauss_order: int = 3
    near_field_levels: int = 6
    rel_tol: float = 1e-3
    cache_dir: str | None = None

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(
            gauss_order=self.gauss_order,
            near_field_levels=self.near_field_levels,
            rel_tol=self.rel_tol,
        )

    def validate(self, path: str = "kernel") -> None:
        if not self.truncation_multiplier >= 1:
            raise ConfigError(
                f"{path}.truncation_multiplier: below one cell width"
            )
        try:
            self.quadrature()
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from None


@dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float = 0.25
    sigma: float = 1e-3
    min_radius: float | None = None  # None: one cell volume
    max_outer: int = 200
    pred_tol: float = 0.0
    node_budget: int = 10**6
    time_budget: float | None = None
    start: str = "empty"  # or "full"

    def validate(self, path: str = "trust_region") -> None:
        if not self.delta0 > 0:
            raise ConfigError(f"{path}.delta0: must be positive")
        if not 0 < self.sigma < 1:
            raise ConfigError(f"{path}.sigma: must lie in (0,1)")
        if self.min_radius is not None and not self.min_radius > 0:
            raise ConfigError(f"{path}.min_radius: must be positive")
        if self.max_outer < 1:
            raise ConfigError(f"{path}.max_outer: must be >= 1")
        if self.pred_tol < 0:
            raise ConfigError(f"{path}.pred_tol: must be nonnegative")
        if self.node_budget < 1:
            raise ConfigError(f"{path}.node_budget: must be >= 1")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ConfigError(f"{path}.time_budget: must be positive")
        if self.start not in ("empty", "full"):
            raise ConfigError(f"{path}.start: expected 'empty' or 'full'")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json", "pgm")
    record_timings: bool = False

    def validate(self, path: str = "output") -> None:
        bad = set(self.formats) - {"csv", "json", "pgm"}
        if bad:
            raise ConfigError(f"{path}.formats: unknown formats {sorted(bad)}")


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "RunConfig":
        self.problem.validate()
        self.discretization.validate()
        self.kernel.validate()
        self.trust_region.validate()
        self.output.validate()
        return self

    def band_cells(self) -> int:
        """Exterior band width in cells, wide enough for the kernel cutoff."""
        if self.discretization.exterior_band is not None:
            return self.discretization.exterior_band
        if self.problem.limit_mode:
            return 0
        return int(math.ceil(self.kernel.truncation_multiplier - 1e-9))


_SECTIONS = {
    "problem": (ProblemConfig, "problem"),
    "discretization": (DiscretizationConfig, "discretization"),
    "kernel": (KernelConfig, "kernel"),
    "trust_region": (TrustRegionConfig, "trust_region"),
    "output": (OutputConfig, "output"),
}


def _build_section(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for key, value in data.items():
        if key == "target":
            value = _build_section(TargetSpec, value, f"{path}.target")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def config_from_mapping(data: dict | None) -> RunConfig:
    """Strict construction: unknown sections or fields are errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a mapping of sections")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    parts = {}
    for name, (cls, path) in _SECTIONS.items():
        parts[name] = _build_section(cls, data.get(name), path)
    return RunConfig(**parts).validate()


def config_to_mapping(config: RunConfig) -> dict:
    data = asdict(config)
    for section in data.values():
        for key, value in list(section.items()):
            if isinstance(value, tuple):
                section[key] = list(value)
            elif isinstance(value, dict):
                for k2, v2 in list(value.items()):
                    if isinstance(v2, tuple):
                        value[k2] = list(v2)
    return data


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_mapping(data)


def save_run_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_mapping(config), fh, sort_keys=True)
