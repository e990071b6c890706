"""Scenario configuration for msfilter.

A scenario is a TOML document read with tomllib. Bundled scenarios ship in
the msfilter.scenarios package and are addressed by name; anything else is a
path. The user document is merged over DEFAULT_CONFIG, validated, then
converted into frozen dataclasses.

Density records carry a ``kind`` discriminator::

    [target]
    kind = "mixture"
    weights = [0.3, 0.7]

    [[target.components]]
    kind = "gaussian"
    mean = 2.0
    std = 1.0
"""

from __future__ import annotations

import copy
import math
import os
import re
import tomllib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from msfilter.core.densities import (
    Cauchy,
    DensityError,
    DensityModel,
    DiscreteNoise,
    ExpPoly,
    Gaussian,
    LambdaCoefficients,
    Laplace,
    Mixture,
    StudentT,
)
from msfilter.core.moments import MomentError, MomentSequence
from msfilter.core.quadrature import QuadratureConfig, QuadratureError
from msfilter.core.surrogate import SolverConfig, SurrogateError

SCENARIO_PACKAGE = "msfilter.scenarios"
OUT_DIR_ENV = "MSF_OUT_DIR"

VALID_MODES = {"fit", "filter", "bound", "compare"}
VALID_PRIOR_MODES = {"gaussian", "cauchy", "matched", "explicit"}
VALID_DENSITY_KINDS = {
    "gaussian",
    "laplace",
    "student_t",
    "cauchy",
    "mixture",
    "exp_poly",
    "moments",
    "discrete",
}
MAX_ORDER = 16

DEFAULT_CONFIG: dict[str, Any] = {
    "mode": "fit",
    "order": 4,
    "seed": 0,
    "prior": {
        "mode": "gaussian",
        "c": 3.0,
    },
    "solver": {
        "grad_tol": 1e-9,
        "max_iters": 200,
        "moment_tol": 1e-6,
    },
    "quadrature": {
        "rel_tol": 1e-10,
        "abs_tol": 1e-12,
        "max_subdivisions": 2000,
        "strategy": "transform",
        "fixed_nodes": 2001,
    },
    "oracle": {
        "enabled": False,
        "n_points": 4001,
        "half_width": 12.0,
        "leak_tol": 1e-5,
        "allow_truncation": False,
    },
    "output": {
        "dir": "msf-output",
        "plot_data": False,
    },
}


class ConfigError(Exception):
    """Raised when a scenario is invalid or cannot be loaded.

    Attributes:
        key: Dotted key of the offending value, if known.
        line: 1-based line of that key in the source document, if found.
        source: Name of the source document.
    """

    def __init__(
        self,
        message: str,
        key: str | None = None,
        line: int | None = None,
        source: str | None = None,
    ) -> None:
        self.message = message
        self.key = key
        self.line = line
        self.source = source
        super().__init__(self._format())

    def _format(self) -> str:
        prefix = self.source or ""
        if self.line is not None:
            prefix = f"{prefix}:{self.line}"
        return f"{prefix}: {self.message}" if prefix else self.message

    def located(self, text: str, source: str) -> ConfigError:
        """Return a copy carrying the source name and the key's line in text."""
        line = self.line if self.line is not None else _find_line(text, self.key)
        return ConfigError(self.message, self.key, line, source)


@dataclass(frozen=True)
class PriorConfig:
    """Prior selection as written in the scenario."""

    mode: str = "gaussian"
    c: float = 3.0
    scale: float | None = None
    density: DensityModel | None = None


@dataclass(frozen=True)
class OracleConfig:
    """Grid oracle settings as written in the scenario."""

    enabled: bool = False
    n_points: int = 4001
    half_width: float = 12.0
    leak_tol: float = 1e-5
    allow_truncation: bool = False


@dataclass(frozen=True)
class OutputSettings:
    """Where and what to write."""

    dir: str = "msf-output"
    plot_data: bool = False


@dataclass(frozen=True)
class SystemConfig:
    """A scalar linear system with its initial state and observations.

    Scalars in the document are broadcast over the horizon. observations is
    None when they are to be simulated for ``steps`` steps.
    With fit_init the filter starts from a surrogate fitted to the moments of
    init rather than from init itself.
    """

    f: tuple[float, ...]
    h: tuple[float, ...]
    process_noise: tuple[DensityModel | DiscreteNoise, ...]
    obs_noise: tuple[DensityModel, ...]
    init: DensityModel | MomentSequence
    horizon: int
    observations: tuple[float, ...] | None = None
    truth_init: DensityModel | None = None
    fit_init: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully validated scenario."""

    name: str
    mode: str
    order: int
    seed: int = 0
    target: DensityModel | MomentSequence | None = None
    system: SystemConfig | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output: OutputSettings = field(default_factory=OutputSettings)
    truncate_radius: float | None = None
    reference_tv: float | None = None
    reference_q: tuple[float, ...] | None = None
    description: str = ""


def _find_line(text: str, key: str | None) -> int | None:
    """Best-effort line number of a dotted key in a TOML document."""
    if not key:
        return None
    parts = [p for p in key.split(".") if not p.isdigit()]
    leaf = parts[-1]
    table = ".".join(parts[:-1])
    lines = text.splitlines()
    start = 0
    if table:
        header = re.compile(rf"^\s*\[\[?\s*{re.escape(table)}\s*\]\]?\s*$")
        for i, line in enumerate(lines):
            if header.match(line):
                start = i
                break
    assignment = re.compile(rf"^\s*{re.escape(leaf)}\s*=")
    for i in range(start, len(lines)):
        if assignment.match(lines[i]):
            return i + 1
    header = re.compile(rf"^\s*\[\[?\s*{re.escape('.'.join(parts))}\s*\]\]?\s*$")
    for i, line in enumerate(lines):
        if header.match(line):
            return i + 1
    return None


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Deep merge two dictionaries, with override taking precedence."""
    result = copy.deepcopy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def _number(record: dict[str, Any], name: str, key: str, default: float | None = None) -> float:
    value = record.get(name, default)
    dotted = f"{key}.{name}" if key else name
    if value is None:
        raise ConfigError(f"{dotted} is required", dotted)
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ConfigError(f"{dotted} must be a number, got {type(value).__name__}", dotted)
    if not math.isfinite(value):
        raise ConfigError(f"{dotted} must be finite", dotted)
    return float(value)


def _numbers(record: dict[str, Any], name: str, key: str) -> tuple[float, ...]:
    values = record.get(name)
    dotted = f"{key}.{name}" if key else name
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{dotted} must be a non-empty list of numbers", dotted)
    return tuple(_number({name: v}, name, key) for v in values)


def parse_density(
    record: Any, key: str
) -> DensityModel | MomentSequence | DiscreteNoise:
    """Build a density, moment sequence or discrete noise from a config record.

    Args:
        record: Table with a ``kind`` field.
        key: Dotted key of the record, used in error messages.

    Raises:
        ConfigError: If the record is malformed or its parameters are invalid.
    """
    if not isinstance(record, dict):
        raise ConfigError(f"{key} must be a table with a 'kind' field", key)
    kind = record.get("kind")
    if kind not in VALID_DENSITY_KINDS:
        raise ConfigError(
            f"Invalid density kind '{kind}' at {key}. "
            f"Valid options: {', '.join(sorted(VALID_DENSITY_KINDS))}",
            f"{key}.kind",
        )
    try:
        match kind:
            case "gaussian":
                return Gaussian(_number(record, "mean", key, 0.0), _number(record, "std", key))
            case "laplace":
                return Laplace(
                    _number(record, "location", key, 0.0), _number(record, "scale", key)
                )
            case "student_t":
                return StudentT(
                    _number(record, "dof", key),
                    _number(record, "location", key, 0.0),
                    _number(record, "scale", key, 1.0),
                )
            case "cauchy":
                return Cauchy(_number(record, "location", key, 0.0), _number(record, "scale", key))
            case "mixture":
                weights = _numbers(record, "weights", key)
                raw = record.get("components")
                if not isinstance(raw, list) or len(raw) != len(weights):
                    raise ConfigError(
                        f"{key}.components must list one record per weight",
                        f"{key}.components",
                    )
                components = []
                for i, item in enumerate(raw):
                    component = parse_density(item, f"{key}.components.{i}")
                    if isinstance(component, MomentSequence | DiscreteNoise):
                        raise ConfigError(
                            f"{key}.components.{i} must be a density",
                            f"{key}.components.{i}.kind",
                        )
                    components.append(component)
                return Mixture(weights, tuple(components))
            case "exp_poly":
                return ExpPoly(LambdaCoefficients(_numbers(record, "coeffs", key)))
            case "moments":
                return MomentSequence(_numbers(record, "values", key))
            case _:
                return DiscreteNoise(
                    _numbers(record, "atoms", key), _numbers(record, "probabilities", key)
                )
    except (DensityError, MomentError) as e:
        raise ConfigError(f"{key}: {e}", f"{key}.kind") from e


def _density(record: Any, key: str) -> DensityModel:
    model = parse_density(record, key)
    if isinstance(model, MomentSequence | DiscreteNoise):
        raise ConfigError(f"{key} must be a density, not '{record['kind']}'", f"{key}.kind")
    return model


def _validate_config(config_dict: dict[str, Any]) -> None:
    """Validate the scalar fields of a merged scenario.

    Density records are validated while they are parsed.

    Raises:
        ConfigError: If configuration values are invalid.
    """
    mode = config_dict.get("mode")
    if mode not in VALID_MODES:
        raise ConfigError(
            f"Invalid mode '{mode}'. Valid options: {', '.join(sorted(VALID_MODES))}", "mode"
        )

    order = config_dict.get("order")
    if isinstance(order, bool) or not isinstance(order, int):
        raise ConfigError(f"order must be an integer, got {type(order).__name__}", "order")
    if order % 2 == 1 or not 2 <= order <= MAX_ORDER:
        raise ConfigError(f"order must be even between 2 and {MAX_ORDER}, got {order}", "order")

    seed = config_dict.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", "seed")

    if mode in {"fit", "bound"} and "target" not in config_dict:
        raise ConfigError(f"Mode '{mode}' needs a [target] record", "target")
    if mode in {"filter", "compare"} and "system" not in config_dict:
        raise ConfigError(f"Mode '{mode}' needs a [system] table", "system")

    prior = config_dict.get("prior", {})
    prior_mode = prior.get("mode")
    if prior_mode not in VALID_PRIOR_MODES:
        raise ConfigError(
            f"Invalid prior mode '{prior_mode}'. "
            f"Valid options: {', '.join(sorted(VALID_PRIOR_MODES))}",
            "prior.mode",
        )
    if prior_mode == "gaussian" and not _number(prior, "c", "prior") > 1:
        raise ConfigError("prior.c must exceed 1", "prior.c")
    if prior_mode == "cauchy" and not _number(prior, "scale", "prior") > 0:
        raise ConfigError("prior.scale must be positive", "prior.scale")
    if prior_mode == "explicit" and "density" not in prior:
        raise ConfigError("Explicit prior mode needs a [prior.density] record", "prior.density")

    oracle = config_dict.get("oracle", {})
    for name in ("enabled", "allow_truncation"):
        if not isinstance(oracle.get(name), bool):
            raise ConfigError(f"oracle.{name} must be a boolean", f"oracle.{name}")

    output = config_dict.get("output", {})
    if not isinstance(output.get("dir"), str):
        raise ConfigError("output.dir must be a string", "output.dir")
    if not isinstance(output.get("plot_data"), bool):
        raise ConfigError("output.plot_data must be a boolean", "output.plot_data")

    radius = config_dict.get("truncate_radius")
    if radius is not None and not _number(config_dict, "truncate_radius", "") > 0:
        raise ConfigError("truncate_radius must be positive", "truncate_radius")


def _broadcast(value: Any, horizon: int, key: str) -> list[Any]:
    if isinstance(value, list):
        if len(value) < horizon:
            raise ConfigError(
                f"{key} has {len(value)} entries, horizon is {horizon}", key
            )
        return value
    return [value] * max(horizon, 1)


def _system(record: Any) -> SystemConfig:
    if not isinstance(record, dict):
        raise ConfigError("system must be a table", "system")
    observations = record.get("observations")
    if observations is not None:
        observations = _numbers(record, "observations", "system") if observations else ()
    steps = record.get("steps")
    if observations is None and steps is None:
        raise ConfigError("system needs either observations or steps", "system.steps")
    if steps is not None and (isinstance(steps, bool) or not isinstance(steps, int) or steps < 0):
        raise ConfigError("system.steps must be a nonnegative integer", "system.steps")
    horizon = len(observations) if observations is not None else int(steps)
    horizon = int(record.get("horizon", horizon))
    if observations is not None and len(observations) > horizon:
        raise ConfigError(
            f"{len(observations)} observations exceed the horizon of {horizon}",
            "system.observations",
        )

    f = tuple(
        _number({"f": v}, "f", "system")
        for v in _broadcast(record.get("f", 1.0), horizon, "system.f")
    )
    h = tuple(
        _number({"h": v}, "h", "system")
        for v in _broadcast(record.get("h", 1.0), horizon, "system.h")
    )
    if "process_noise" not in record or "obs_noise" not in record:
        raise ConfigError("system needs process_noise and obs_noise records", "system")
    process: list[DensityModel | DiscreteNoise] = []
    per_step = isinstance(record["process_noise"], list)
    for i, item in enumerate(_broadcast(record["process_noise"], horizon, "system.process_noise")):
        key = f"system.process_noise.{i}" if per_step else "system.process_noise"
        noise = parse_density(item, key)
        if isinstance(noise, MomentSequence):
            raise ConfigError(f"{key} cannot be a moment list", f"{key}.kind")
        process.append(noise)
    obs: list[DensityModel] = []
    per_step = isinstance(record["obs_noise"], list)
    for i, item in enumerate(_broadcast(record["obs_noise"], horizon, "system.obs_noise")):
        key = f"system.obs_noise.{i}" if per_step else "system.obs_noise"
        obs.append(_density(item, key))

    if "init" not in record:
        raise ConfigError("system needs an [system.init] record", "system.init")
    init = parse_density(record["init"], "system.init")
    if isinstance(init, DiscreteNoise):
        raise ConfigError("system.init cannot be discrete", "system.init.kind")
    fit_init = record.get("fit_init", False)
    if not isinstance(fit_init, bool):
        raise ConfigError("system.fit_init must be a boolean", "system.fit_init")
    if fit_init and not isinstance(init, DensityModel):
        raise ConfigError("system.fit_init needs a density init", "system.fit_init")
    truth_init = None
    if "truth_init" in record:
        truth_init = _density(record["truth_init"], "system.truth_init")
    if observations is None and isinstance(init, MomentSequence) and truth_init is None:
        raise ConfigError(
            "Simulating observations from a moment list needs a [system.truth_init] density",
            "system.truth_init",
        )

    return SystemConfig(
        f=f,
        h=h,
        process_noise=tuple(process),
        obs_noise=tuple(obs),
        init=init,
        horizon=horizon,
        observations=observations,
        truth_init=truth_init,
        fit_init=fit_init,
    )


def _dict_to_config(config_dict: dict[str, Any], name: str) -> ScenarioConfig:
    """Convert a validated scenario dictionary to ScenarioConfig."""
    prior_dict = config_dict.get("prior", {})
    solver_dict = config_dict.get("solver", {})
    quad_dict = config_dict.get("quadrature", {})
    oracle_dict = config_dict.get("oracle", {})
    output_dict = config_dict.get("output", {})

    target = None
    if "target" in config_dict:
        parsed = parse_density(config_dict["target"], "target")
        if isinstance(parsed, DiscreteNoise):
            raise ConfigError("target cannot be discrete", "target.kind")
        target = parsed

    reference_q = None
    if "reference_q" in config_dict:
        reference_q = _numbers(config_dict, "reference_q", "")

    try:
        solver = SolverConfig(**solver_dict)
    except (TypeError, SurrogateError) as e:
        raise ConfigError(f"Invalid solver settings: {e}", "solver") from e
    try:
        quadrature = QuadratureConfig(**quad_dict)
    except (TypeError, QuadratureError) as e:
        raise ConfigError(f"Invalid quadrature settings: {e}", "quadrature") from e

    radius = config_dict.get("truncate_radius")
    reference_tv = config_dict.get("reference_tv")
    return ScenarioConfig(
        name=str(config_dict.get("name", name)),
        mode=config_dict["mode"],
        order=config_dict["order"],
        seed=config_dict["seed"],
        target=target,
        system=_system(config_dict["system"]) if "system" in config_dict else None,
        prior=PriorConfig(
            mode=prior_dict["mode"],
            c=float(prior_dict.get("c", 3.0)),
            scale=float(prior_dict["scale"]) if "scale" in prior_dict else None,
            density=_density(prior_dict["density"], "prior.density")
            if "density" in prior_dict
            else None,
        ),
        solver=solver,
        quadrature=quadrature,
        oracle=OracleConfig(
            enabled=oracle_dict["enabled"],
            n_points=int(oracle_dict["n_points"]),
            half_width=float(oracle_dict["half_width"]),
            leak_tol=float(oracle_dict["leak_tol"]),
            allow_truncation=oracle_dict["allow_truncation"],
        ),
        output=OutputSettings(dir=output_dict["dir"], plot_data=output_dict["plot_data"]),
        truncate_radius=float(radius) if radius is not None else None,
        reference_tv=float(reference_tv) if reference_tv is not None else None,
        reference_q=reference_q,
        description=str(config_dict.get("description", "")),
    )


def parse_scenario(
    text: str, source: str = "<scenario>", name: str | None = None
) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Raises:
        ConfigError: With the source name and, where it can be found, the line.
    """
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML: {e}", source=source) from e

    merged = _deep_merge(DEFAULT_CONFIG, document)
    try:
        _validate_config(merged)
        return _dict_to_config(merged, name or Path(source).stem)
    except ConfigError as e:
        raise e.located(text, source) from e.__cause__


def bundled_scenarios() -> list[str]:
    """Names of the scenarios shipped with the package."""
    root = resources.files(SCENARIO_PACKAGE)
    return sorted(
        entry.name.removesuffix(".toml")
        for entry in root.iterdir()
        if entry.name.endswith(".toml")
    )


def load_scenario(path_or_name: str | Path) -> ScenarioConfig:
    """Load a scenario from a path, or a bundled scenario by name.

    A bundled name is tried only when no file of that name exists.

    Raises:
        ConfigError: If the scenario is missing or invalid.
    """
    path = Path(path_or_name)
    if path.is_file():
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"Cannot read scenario: {e}", source=str(path)) from e
        return parse_scenario(text, str(path), path.stem)

    name = str(path_or_name)
    resource = resources.files(SCENARIO_PACKAGE) / f"{name}.toml"
    if not resource.is_file():
        raise ConfigError(
            f"No scenario file or bundled scenario named '{name}'. "
            f"Bundled: {', '.join(bundled_scenarios())}"
        )
    return parse_scenario(resource.read_text(), f"{name}.toml", name)


def resolve_output_dir(config: ScenarioConfig, override: str | Path | None = None) -> Path:
    """Output directory with precedence: override > MSF_OUT_DIR > [output].dir."""
    if override:
        return Path(override)
    env_dir = os.environ.get(OUT_DIR_ENV, "")
    if env_dir:
        return Path(env_dir)
    return Path(config.output.dir)
