"""Run configuration: a strict JSON schema and builders for solver objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .discretization import CFL_LIMIT, Grid, SpaceTimeField
from .errors import ConfigError
from .io import read_field, read_vector
from .scale import Geometry, ScaleFunction


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScaleSpec(_Strict):
    family: Literal["constant", "linear", "sinusoidal", "custom-sampled"] = "constant"
    params: list[float] = Field(default_factory=lambda: [1.0])
    times: Optional[list[float]] = None
    values: Optional[list[float]] = None
    derivatives: Optional[list[float]] = None


class GridSpec(_Strict):
    nx: int = Field(ge=8)
    nt: Optional[int] = Field(default=None, ge=16)
    cfl: Optional[float] = Field(default=None, gt=0, le=CFL_LIMIT)
    T: float = Field(gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.nt is None) == (self.cfl is None):
            raise ValueError("grid needs exactly one of nt or cfl")
        return self


class GeometrySpec(_Strict):
    gamma0: Literal["left", "right", "both"] = "right"
    mode: Literal["additive", "disjoint"] = "additive"
    n: int = Field(default=1, ge=1)
    split: float = Field(default=0.5, gt=0, lt=1)


class ProblemSpec(_Strict):
    sigma: float = Field(default=1.0, gt=0)
    delta: float = Field(default=0.0, ge=0)
    rho0: float = Field(default=0.1, gt=0)
    rho1: float = Field(default=0.1, gt=0)


class FunctionSpec(_Strict):
    """``zero``, ``sine`` (``amplitude sin(k pi y)``), ``bump``
    (``amplitude exp(-((y - center)/width)^2)``) or ``csv``.

    Space-time uses multiply by ``cos(omega t)``.
    """

    kind: Literal["zero", "sine", "bump", "csv"] = "zero"
    k: int = Field(default=1, ge=1)
    center: float = 0.5
    width: float = Field(default=0.1, gt=0)
    amplitude: float = 1.0
    omega: float = 0.0
    path: Optional[str] = None

    @model_validator(mode="after")
    def _path(self):
        if (self.kind == "csv") != (self.path is not None):
            raise ValueError("path is required for csv specs and only for them")
        return self


class TargetSpec(_Strict):
    v0: FunctionSpec = Field(default_factory=FunctionSpec)
    v1: FunctionSpec = Field(default_factory=FunctionSpec)


class SolverSpec(_Strict):
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=500, ge=1)
    relaxation: float = Field(default=0.5, gt=0, le=1)
    override_holmgren: bool = False
    override_mode: bool = False


class RunConfig(_Strict):
    scale: ScaleSpec = Field(default_factory=ScaleSpec)
    grid: GridSpec
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    problem: ProblemSpec = Field(default_factory=ProblemSpec)
    v2: FunctionSpec = Field(default_factory=FunctionSpec)
    target: TargetSpec = Field(default_factory=TargetSpec)
    initial: TargetSpec = Field(default_factory=TargetSpec)
    source: FunctionSpec = Field(default_factory=FunctionSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    output_dir: str = "out"


def load_config(path):
    """Parse and validate a JSON config file; raises :class:`ConfigError`."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, base=Path(path).parent)


def parse_config(raw, base=None):
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    if base is not None:
        _resolve_paths(cfg, Path(base))
    return cfg


def _resolve_paths(cfg, base):
    for spec in (cfg.v2, cfg.source, cfg.target.v0, cfg.target.v1, cfg.initial.v0,
                 cfg.initial.v1):
        if spec.path is not None and not Path(spec.path).is_absolute():
            spec.path = str(base / spec.path)


# -- builders -------------------------------------------------------------------


def build_scale(cfg):
    spec = cfg.scale.model_dump(exclude_none=True)
    if cfg.scale.family != "custom-sampled":
        spec.pop("times", None)
        spec.pop("values", None)
    return ScaleFunction.from_config(spec, cfg.grid.T)


def build_grid(cfg, k, nx=None, nt=None):
    nx = cfg.grid.nx if nx is None else nx
    if nt is not None:
        return Grid(nx, nt, cfg.grid.T)
    if cfg.grid.nt is not None and nx == cfg.grid.nx:
        return Grid(nx, cfg.grid.nt, cfg.grid.T)
    cfl = cfg.grid.cfl if cfg.grid.cfl is not None else CFL_LIMIT
    return Grid.from_cfl(nx, cfg.grid.T, cfl, k)


def build_geometry(cfg):
    g = cfg.geometry
    try:
        return Geometry(g.gamma0, g.mode, g.n, g.split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _profile(spec, y):
    if spec.kind == "zero":
        return np.zeros_like(y)
    if spec.kind == "sine":
        return spec.amplitude * np.sin(spec.k * np.pi * y)
    if spec.kind == "bump":
        return spec.amplitude * np.exp(-(((y - spec.center) / spec.width) ** 2))
    raise AssertionError(spec.kind)


def eval_vector(spec, grid, zero_ends=True):
    """Nodal vector on the grid (end values cleared when ``zero_ends``)."""
    if spec.kind == "csv":
        y, vals = read_vector(spec.path)
        if y.shape != grid.y.shape or not np.allclose(y, grid.y):
            raise ConfigError(f"{spec.path}: nodes do not match the grid")
        out = vals.copy()
    else:
        out = _profile(spec, grid.y)
    if zero_ends:
        out[0] = out[-1] = 0.0
    return out


def eval_field(spec, grid):
    """Space-time field ``profile(y) cos(omega t)`` or a field read from CSV."""
    if spec.kind == "csv":
        try:
            return read_field(spec.path, grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    prof = _profile(spec, grid.y)
    return SpaceTimeField(prof[None, :] * np.cos(spec.omega * grid.t)[:, None], grid)
