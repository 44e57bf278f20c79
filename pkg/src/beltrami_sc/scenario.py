"""Scenario files: which field, which grid, which solver settings, which outputs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import (
    CAYLEY,
    BumpField,
    ConstantField,
    FieldError,
    GridSpec,
    PiecewiseField,
    StripField,
    ZeroField,
    average_field,
    load_field,
)
from .gluing import GluingComplex, build_grid_complex, triangle_fixture
from .uniformize import SolverOptions

__all__ = ["ScenarioError", "Scenario", "OUTPUTS", "FIELD_KINDS", "load_scenario"]

OUTPUTS = ("field", "complex", "symbol", "report", "skeleton", "probes", "geodesics", "transport", "limits", "svg")
FIELD_KINDS = ("zero", "constant", "strips", "bump", "cell", "file", "triangle")


class ScenarioError(ValueError):
    """Scenario file does not match the schema."""


def _complex(value, name: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    raise ScenarioError(f"{name} must be a number or a [re, im] pair")


def _positive(value, name: str, integer: bool = False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok or not value > 0:
        raise ScenarioError(f"{name} must be a positive {'integer' if integer else 'number'}")
    return value


@dataclass
class Scenario:
    field_spec: dict
    grid: GridSpec | None
    solver: SolverOptions
    outputs: tuple[str, ...] = OUTPUTS
    seed: int = 0
    probes: int = 20
    geodesics: list = field(default_factory=list)
    limits: dict = field(default_factory=dict)
    transform: str | None = None
    base_dir: Path = field(default_factory=Path)
    raw: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.field_spec["kind"]

    @property
    def is_triangle(self) -> bool:
        return self.kind == "triangle"

    @classmethod
    def from_json(cls, data: dict, base_dir=".") -> Scenario:
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        spec = data.get("field")
        if not isinstance(spec, dict) or spec.get("kind") not in FIELD_KINDS:
            raise ScenarioError(f"field.kind must be one of {', '.join(FIELD_KINDS)}")
        grid = None
        if spec["kind"] != "triangle":
            g = data.get("grid")
            if spec["kind"] != "file" and not isinstance(g, dict):
                raise ScenarioError("grid {L, m} is required")
            if isinstance(g, dict):
                grid = GridSpec(float(_positive(g.get("L"), "grid.L")), _positive(g.get("m"), "grid.m", True))
        try:
            solver = SolverOptions.from_json(data.get("solver"))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"invalid solver options: {exc}") from exc
        outputs = data.get("outputs", list(OUTPUTS))
        if not isinstance(outputs, list) or any(o not in OUTPUTS for o in outputs):
            raise ScenarioError(f"outputs must be a list drawn from {', '.join(OUTPUTS)}")
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ScenarioError("seed must be an integer")
        probes = data.get("probes", 20)
        if isinstance(probes, bool) or not isinstance(probes, int) or probes < 0:
            raise ScenarioError("probes must be a non-negative integer")
        geodesics = data.get("geodesics", [])
        if not isinstance(geodesics, list):
            raise ScenarioError("geodesics must be a list")
        for g in geodesics:
            if not isinstance(g, dict) or "start" not in g or "direction" not in g:
                raise ScenarioError("each geodesic needs start and direction")
        limits = data.get("limits", {})
        if not isinstance(limits, dict):
            raise ScenarioError("limits must be an object")
        transform = data.get("transform")
        if transform not in (None, "identity", "cayley"):
            raise ScenarioError("transform must be identity or cayley")
        scen = cls(spec, grid, solver, tuple(outputs), seed, probes, geodesics, limits,
                   None if transform == "identity" else transform, Path(base_dir), data)
        scen._check_field()
        return scen

    def _check_field(self) -> None:
        spec = self.field_spec
        kind = spec["kind"]
        try:
            if kind == "constant":
                _complex(spec.get("value"), "field.value")
            elif kind == "strips":
                _positive(spec.get("width", 1.0), "field.width")
                if not 0 <= float(spec.get("kappa", -1)) < 1:
                    raise ScenarioError("field.kappa must lie in [0, 1)")
            elif kind == "bump":
                _complex(spec.get("amplitude"), "field.amplitude")
                _positive(spec.get("radius", 1.0), "field.radius")
            elif kind == "cell":
                _complex(spec.get("value"), "field.value")
                for key in ("row", "col"):
                    v = spec.get(key)
                    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < self.grid.m:
                        raise ScenarioError(f"field.{key} must be a cell index")
            elif kind == "file":
                if not isinstance(spec.get("path"), str):
                    raise ScenarioError("field.path must be a string")
            self.build_field()
        except FieldError as exc:
            raise ScenarioError(f"invalid field: {exc}") from exc

    def build_field(self):
        """The continuous field object (None for the triangle fixture)."""
        spec = self.field_spec
        kind = spec["kind"]
        if kind == "zero":
            return ZeroField()
        if kind == "constant":
            return ConstantField(_complex(spec["value"], "field.value"))
        if kind == "strips":
            return StripField(float(spec["kappa"]), float(spec.get("width", 1.0)))
        if kind == "bump":
            return BumpField(_complex(spec["amplitude"], "field.amplitude"),
                             _complex(spec.get("center", 0.0), "field.center"),
                             float(spec.get("radius", 1.0)), spec.get("profile", "plain"))
        if kind == "file":
            loaded = load_field(self.base_dir / spec["path"])
            if self.grid is None:
                self.grid = loaded.grid
            return loaded
        return None

    def piecewise(self) -> PiecewiseField:
        if self.is_triangle:
            raise ScenarioError("the triangle fixture has no grid field")
        if self.kind == "cell":
            vals = np.zeros((self.grid.m, self.grid.m), complex)
            vals[self.field_spec["row"], self.field_spec["col"]] = _complex(self.field_spec["value"], "field.value")
            return PiecewiseField(self.grid, vals)
        nu = CAYLEY if self.transform == "cayley" else None
        return average_field(self.build_field(), self.grid, nu)

    def gluing_complex(self) -> GluingComplex:
        if self.is_triangle:
            return triangle_fixture()
        return build_grid_complex(self.piecewise())


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    return Scenario.from_json(data, path.parent)
