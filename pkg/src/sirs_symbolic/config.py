from __future__ import annotations

import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .abstraction import AbstractionSettings
from .dynamics import IntegratorConfig, ModelParams
from .errors import ConfigError
from .grid import Grid, ProblemBounds, Thresholds
from .runtime import SelectionConfig

logger = logging.getLogger(__name__)

ICU_FIELDS = ("N_ICU", "N_total", "tau")


def derive_ibar_from_icu(n_icu: float, n_total: float, tau: float, round_down: bool = True) -> float:
    """ICU-capacity bound on the infected fraction, optionally floored to two decimals."""
    for name, value in (("N_ICU", n_icu), ("N_total", n_total), ("tau", tau)):
        if not value > 0:
            raise ConfigError(f"{name} must be > 0, got {value}")
    ibar = n_icu / (n_total * tau)
    if round_down:
        ibar = math.floor(ibar * 100 + 1e-9) / 100
    return ibar


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    gamma: float = 0.15
    xi: float = 0.02
    u_levels: tuple[float, ...] = (0.26, 0.22, 0.17)

    eta_S: float = 0.01
    eta_I: float = 0.01
    thresholds: tuple[float, ...] = (0.01, 0.02, 0.03)

    S0_lo: float = 0.50
    S0_hi: float = 0.80
    I0_lo: float = 0.055
    I0_hi: float = 0.085
    S_S: float = 0.45
    I_S: float = 0.10
    S_F: float = 0.60
    I_F: float = 0.05

    step: float = 0.01
    horizon: float = 1000.0
    crossing_tol: float = 1e-9

    lam: float = Field(0.99, alias="lambda")
    horizon_T: float = math.inf
    max_depth: int = 8
    tail_tol: float = 1e-3

    N_ICU: Optional[float] = None
    N_total: Optional[float] = None
    tau: Optional[float] = None

    seed: int = 0
    strict_direction_check: bool = False
    side_window: Literal["span", "as_printed"] = "span"
    s_floor: Optional[float] = None
    workers: int = 1
    t_end: float = 1000.0
    sample_every: int = Field(10, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _derive_icu_bound(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        if "I_S" in data:
            ignored = [name for name in ICU_FIELDS if data.get(name) is not None]
            if ignored:
                logger.warning("I_S=%s is set explicitly; ignoring %s", data["I_S"], ", ".join(ignored))
            return data
        given = [data.get(name) for name in ICU_FIELDS]
        if all(value is not None for value in given):
            data = {**data, "I_S": derive_ibar_from_icu(*given)}
            logger.info("derived I_S=%.2f from ICU capacity", data["I_S"])
        return data

    @model_validator(mode="after")
    def _check_domain(self) -> RunConfig:
        self.abstraction_settings()
        self.selection()
        if self.workers == 0:
            raise ConfigError("workers must be nonzero")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be > 0, got {self.t_end}")
        return self

    def params(self) -> ModelParams:
        return ModelParams(self.gamma, self.xi, self.u_levels)

    def grid(self) -> Grid:
        return Grid(self.eta_S, self.eta_I)

    def threshold_set(self) -> Thresholds:
        return Thresholds.from_values(self.thresholds, self.grid())

    def bounds(self) -> ProblemBounds:
        return ProblemBounds(
            self.S0_lo, self.S0_hi, self.I0_lo, self.I0_hi, self.S_S, self.I_S, self.S_F, self.I_F
        )

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.step, self.horizon, self.crossing_tol)

    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.lam, self.horizon_T, self.max_depth, self.tail_tol)

    def abstraction_settings(self) -> AbstractionSettings:
        return AbstractionSettings(
            params=self.params(),
            grid=self.grid(),
            bounds=self.bounds(),
            thresholds=self.threshold_set(),
            integrator=self.integrator(),
            strict_direction_check=self.strict_direction_check,
            side_window=self.side_window,
            s_floor=self.s_floor,
        )


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(loc) for loc in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_format_errors(exc)}") from exc


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Read a flat TOML file; with no path the built-in defaults are used."""
    if path is None:
        return parse_config({})
    try:
        with Path(path).open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, value in cfg.model_dump(by_alias=True).items():
        if value is None:
            continue
        lines.append(f"{name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
