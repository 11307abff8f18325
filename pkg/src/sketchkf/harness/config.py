"""TOML experiment configuration.

Sections: ``[model]`` (with optional ``[model.network]``, ``[model.traffic]``
and ``[model.linkcost]`` subtables), one ``[method.<name>]`` table per filter
variant and ``[experiment]``.  Unknown keys anywhere are errors.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigurationError
from .methods import METHOD_KINDS, MethodSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NetworkSection(_Strict):
    levels: int = Field(2, ge=0)
    max_nodes: Optional[int] = Field(50, ge=2)
    sampled_links: Optional[int] = Field(189, ge=1)
    seed: int = 0


class TrafficSection(_Strict):
    sigma_f: float = Field(0.02, gt=0)
    rho: float = Field(0.2, gt=0, lt=1)
    sigma: float = Field(0.5, gt=0)
    initial_level: float = 2.0


class LinkCostSection(_Strict):
    sigma_c: float = Field(0.04, gt=0)
    sigma: float = Field(0.1, gt=0)
    initial_mean: float = 1.0
    sigma_0: float = Field(0.1, gt=0)


class ModelSection(_Strict):
    kind: Literal["synthetic", "traffic", "linkcost"] = "synthetic"
    p: int = Field(50, ge=1)
    D: int = Field(500, ge=1)
    N: int = Field(100, ge=1)
    sigma_w: float = Field(0.01, ge=0)
    q_rho: float = Field(0.5, gt=0, lt=1)
    r_rho: float = Field(0.5, gt=0, lt=1)
    correlated_noise: bool = True
    sigma_v2: float = Field(1.0, gt=0)
    p0: float = Field(0.04, gt=0)
    m0: list[tuple[int, float]] = [(0, 20.0), (4, -30.0)]
    alpha_low: float = 0.5
    alpha_high: float = 1.5
    alpha_discrete: bool = False
    network: NetworkSection = NetworkSection()
    traffic: TrafficSection = TrafficSection()
    linkcost: LinkCostSection = LinkCostSection()

    @model_validator(mode="after")
    def _check(self):
        if any(not 0 <= i < self.p for i, _ in self.m0):
            raise ValueError("m0 positions must lie in [0, p)")
        if not 0 < self.alpha_low <= self.alpha_high:
            raise ValueError("need 0 < alpha_low <= alpha_high")
        return self


class _MethodBase(_Strict):
    kind: Optional[str] = None


class PlainMethod(_MethodBase):
    pass


class CensorMethod(_MethodBase):
    tau: Optional[float] = Field(None, ge=0)
    mu: Optional[float] = Field(None, ge=0)
    normalize_innovation: bool = False
    controller_gain: float = Field(0.5, gt=0)
    tau_b: Optional[float] = Field(None, ge=0)
    calibration_slots: int = Field(10, ge=1)
    full_noise_block: bool = False


class UpdateSelectionMethod(_MethodBase):
    tau: Optional[float] = Field(None, ge=0)
    k: int = Field(0, ge=0)
    mu_mode: Literal["optimal", "half_optimal", "zero"] = "optimal"
    decay: float = Field(1.0, ge=0)
    gate: Literal["innovation", "symmetric_kl"] = "innovation"
    controller_gain: float = Field(0.5, gt=0)
    tau_b: Optional[float] = Field(None, ge=0)
    calibration_slots: int = Field(10, ge=1)


_METHOD_MODELS = {
    "full": PlainMethod, "random": PlainMethod, "rp": PlainMethod, "greedy": PlainMethod,
    "ac": CensorMethod, "us": UpdateSelectionMethod,
}


class ExperimentSection(_Strict):
    runs: int = Field(20, ge=1)
    seed: int = 0
    d_over_D: float = Field(0.2, gt=0, le=1)
    threads: int = Field(1, ge=1)
    out_dir: str = "results"
    timing: bool = False
    export_network: bool = True


class ExperimentConfig(_Strict):
    model: ModelSection = ModelSection()
    method: dict[str, Union[CensorMethod, UpdateSelectionMethod, PlainMethod]] = {"full": PlainMethod()}
    experiment: ExperimentSection = ExperimentSection()

    @model_validator(mode="before")
    @classmethod
    def _typed_methods(cls, data):
        if not isinstance(data, dict) or "method" not in data:
            return data
        methods = data["method"]
        if not isinstance(methods, dict) or not methods:
            raise ValueError("[method] needs at least one [method.<name>] table")
        typed = {}
        for name, body in methods.items():
            if isinstance(body, BaseModel):
                typed[name] = body
                continue
            body = dict(body or {})
            kind = body.get("kind") or name
            if kind not in _METHOD_MODELS:
                raise ValueError(f"method {name!r}: unknown kind {kind!r}; expected one of {METHOD_KINDS}")
            try:
                typed[name] = _METHOD_MODELS[kind].model_validate(body)
            except ValidationError as exc:
                raise ValueError(f"method.{name}: {_format(exc, prefix='')}") from None
        return {**data, "method": typed}

    def method_specs(self) -> list[MethodSpec]:
        specs = []
        for name, body in self.method.items():
            fields = body.model_dump(exclude={"kind"})
            specs.append(MethodSpec(kind=body.kind or name, label=name, **fields))
        return specs

    def with_updates(self, **sections) -> "ExperimentConfig":
        """Copy with selected fields of ``model``/``experiment`` replaced."""
        data = self.model_dump()
        for section, values in sections.items():
            if section == "method":
                for name, body in values.items():
                    data["method"][name].update(body)
            else:
                data[section].update(values)
        return ExperimentConfig(**data)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigurationError(_format(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parse_config(data)


def _format(exc: ValidationError, prefix: str = "invalid configuration: ") -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        lines.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return prefix + "; ".join(lines)
