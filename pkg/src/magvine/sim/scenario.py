"""Scenario documents: schema, validation and bundled fixtures.

A scenario is a UTF-8 JSON document with top-level keys `environment`,
`vine`, `epm`, `limits`, `noise`, `script`, `seed`, `dt` (plus optional
`initial`, `mode` and model-constant overrides).  All numeric fields are
SI: meters, pascals, radians, seconds.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass, field, replace

import jsonschema
import numpy as np

from ..actuation import EpmPose, WorkspaceLimits
from ..magnetics import MagnetSpec
from ..mechanics import VineParams, VineState
from .environment import Environment, LumenSegment, Target


class ScenarioError(ValueError):
    """Scenario document fails schema or invariant validation."""


_VEC3 = {"type": "array", "items": {"type": "number"},
         "minItems": 3, "maxItems": 3}
_VEC2 = {"type": "array", "items": {"type": "number"},
         "minItems": 2, "maxItems": 2}
_POLYLINE = {"type": "array", "items": _VEC2, "minItems": 2}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["environment", "vine", "epm", "limits", "noise", "seed",
                 "dt"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "segments": {"type": "array", "items": {
                    "type": "object",
                    "required": ["centerline", "inner_diameter"],
                    "additionalProperties": False,
                    "properties": {
                        "centerline": _POLYLINE,
                        "inner_diameter": {"type": "number",
                                           "exclusiveMinimum": 0},
                    }}},
                "obstacles": {"type": "array", "items": _POLYLINE},
                "targets": {"type": "array", "items": {
                    "type": "object",
                    "required": ["label", "position"],
                    "additionalProperties": False,
                    "properties": {"label": {"type": "string"},
                                   "position": _VEC3}}},
            }},
        "vine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "diameter": {"type": "number", "exclusiveMinimum": 0},
                "drag": {"type": "number", "minimum": 0},
                "restoration_coeff": {"type": "number",
                                      "exclusiveMinimum": 0},
                "collapse_coeff": {"type": "number", "exclusiveMinimum": 0},
                "tip_mass": {"type": "number", "minimum": 0},
                "tip_length": {"type": "number", "exclusiveMinimum": 0},
                "tip_diameter": {"type": "number", "exclusiveMinimum": 0},
                "ipm": {"$ref": "#/$defs/magnet"},
            }},
        "epm": {"$ref": "#/$defs/magnet"},
        "limits": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "min_standoff": {"type": "number", "exclusiveMinimum": 0},
                "box": {"type": "array", "items": _VEC3,
                        "minItems": 2, "maxItems": 2},
                "max_speed": {"type": "number", "exclusiveMinimum": 0},
                "max_ang_speed": {"type": "number", "exclusiveMinimum": 0},
            }},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_pos": {"type": "number", "minimum": 0},
                "sigma_ang": {"type": "number", "minimum": 0},
            }},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_position": _VEC3,
                "base_tangent": _VEC3,
                "base_normal": _VEC3,
                "constrained_length": {"type": "number", "minimum": 0},
                "unconstrained_length": {"type": "number", "minimum": 0},
                "pressure": {"type": "number", "minimum": 0},
            }},
        "mode": {"enum": ["surface", "free3d"]},
        "script": {"type": "array", "items": {
            "type": "object",
            "required": ["t"],
            "additionalProperties": False,
            "properties": {
                "t": {"type": "number", "minimum": 0},
                "epm": {"oneOf": [{"type": "null"}, {
                    "type": "object",
                    "required": ["position", "moment_dir"],
                    "additionalProperties": False,
                    "properties": {"position": _VEC3, "moment_dir": _VEC3}}]},
                "pressure": {"type": "number", "minimum": 0},
                "grow_rate": {"type": "number"},
            }}},
        "seed": {"type": "integer"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "retraction": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tether_rate_coeff": {"type": "number", "minimum": 0},
                "tether_friction": {"type": "number", "minimum": 0},
                "stabilization_coeff": {"type": "number", "minimum": 0},
                "stall_rate": {"type": "number", "minimum": 0},
                "stall_duration": {"type": "number", "minimum": 0},
                "min_free_length": {"type": "number", "minimum": 0},
            }},
        "growth_gate_deg": {"type": "number", "exclusiveMinimum": 0,
                            "maximum": 180},
    },
    "$defs": {
        "magnet": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "diameter": {"type": "number", "exclusiveMinimum": 0},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "remanence": {"type": "number", "exclusiveMinimum": 0},
                "moment_scale": {"type": "number", "exclusiveMinimum": 0},
            }},
    },
}

# paper-scale hardware defaults: 101x101 EPM, 11x22 IPM, N52
_DEFAULT_EPM = {"diameter": 0.101, "length": 0.101, "remanence": 1.48}
_DEFAULT_IPM = {"diameter": 0.011, "length": 0.022, "remanence": 1.48}


@dataclass(frozen=True)
class LocalizationNoise:
    """Additive Gaussian pose noise; defaults put ~95% of samples inside
    the +/-2 mm and +/-3 degree accuracy bounds."""

    sigma_pos: float = 1.0e-3
    sigma_ang: float = math.radians(1.5)

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_ang < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class SimCommand:
    """One tick's worth of commanded inputs (unset fields hold)."""

    epm_pose: EpmPose | None = None
    epm_twist: np.ndarray | None = None
    pressure_setpoint: float | None = None
    grow_rate: float | None = None
    tether_tension: float | None = None

    def __post_init__(self):
        if self.pressure_setpoint is not None and self.pressure_setpoint < 0:
            raise ValueError("pressure setpoint must be non-negative")
        if self.epm_twist is not None:
            tw = np.asarray(self.epm_twist, dtype=float).reshape(6)
            if np.any(np.abs(tw) > 1.0 + 1e-9):
                raise ValueError("twist components must lie in [-1, 1]")
            object.__setattr__(self, "epm_twist", tw)


@dataclass(frozen=True)
class RetractionModel:
    """Tether tension and engulfment-stall constants (calibration knobs;
    the source experiments report outcomes, not tensions)."""

    tether_rate_coeff: float = 100.0
    tether_friction: float = 1.2
    stabilization_coeff: float = 0.016
    stall_rate: float = 0.08
    stall_duration: float = 0.5
    min_free_length: float = 0.02

    def tension(self, retract_rate: float) -> float:
        return self.tether_rate_coeff * abs(retract_rate) + self.tether_friction


@dataclass(frozen=True)
class Scenario:
    environment: Environment
    vine_params: VineParams
    initial_state: VineState
    epm_spec: MagnetSpec
    ipm_spec: MagnetSpec
    epm_moment_scale: float
    limits: WorkspaceLimits
    noise: LocalizationNoise
    script: tuple[tuple[float, SimCommand], ...]
    rng_seed: int
    dt: float
    mode: str = "surface"
    retraction: RetractionModel = field(default_factory=RetractionModel)
    growth_gate_deg: float = 75.0
    name: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ScenarioError("dt must be positive")
        self.environment.validate_vine(self.vine_params.diameter_D)

    def with_calibration(self, drag_C=None, epm_moment_scale=None,
                         restoration_cr=None) -> "Scenario":
        params = self.vine_params
        if drag_C is not None:
            params = replace(params, drag_C=drag_C)
        if restoration_cr is not None:
            params = replace(params, restoration_coeff_cr=restoration_cr)
        scale = (self.epm_moment_scale if epm_moment_scale is None
                 else epm_moment_scale)
        return replace(self, vine_params=params, epm_moment_scale=scale)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, rng_seed=seed)


def _magnet(doc: dict, defaults: dict) -> tuple[MagnetSpec, float]:
    merged = {**defaults, **doc}
    spec = MagnetSpec(diameter=merged["diameter"], length=merged["length"],
                      remanence_Br=merged["remanence"])
    return spec, merged.get("moment_scale", 1.0)


def load_scenario(document) -> Scenario:
    """Validate a scenario document (dict or JSON text) into a Scenario.

    Raises ScenarioError with the failing JSON path on schema violations
    and on physical invariant violations (e.g. a lumen narrower than the
    vine).
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"not valid JSON: {e}") from e
    try:
        jsonschema.validate(document, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"at {path}: {e.message}") from e

    env_doc = document.get("environment", {})
    try:
        env = Environment(
            segments=tuple(LumenSegment(np.array(s["centerline"]),
                                        s["inner_diameter"])
                           for s in env_doc.get("segments", [])),
            obstacles=tuple(np.array(o) for o in env_doc.get("obstacles", [])),
            targets=tuple(Target(t["label"], np.array(t["position"]))
                          for t in env_doc.get("targets", [])))
    except ValueError as e:
        raise ScenarioError(f"at environment: {e}") from e

    vine_doc = dict(document["vine"])
    ipm_doc = vine_doc.pop("ipm", {})
    try:
        params = VineParams(
            diameter_D=vine_doc.get("diameter", 0.025),
            drag_C=vine_doc.get("drag", 0.0),
            restoration_coeff_cr=vine_doc.get("restoration_coeff", 0.01),
            collapse_coeff_cb=vine_doc.get("collapse_coeff", math.pi / 2),
            tip_mass=vine_doc.get("tip_mass", 0.030),
            tip_length=vine_doc.get("tip_length", 0.035),
            tip_diameter=vine_doc.get("tip_diameter", 0.020))
        env.validate_vine(params.diameter_D)
    except ValueError as e:
        raise ScenarioError(f"at vine: {e}") from e

    ini = document.get("initial", {})
    try:
        state = VineState(
            base_position=np.array(ini.get("base_position", [0.0, 0.0, 0.0])),
            base_tangent=np.array(ini.get("base_tangent", [1.0, 0.0, 0.0])),
            base_normal=np.array(ini.get("base_normal", [0.0, 1.0, 0.0])),
            constrained_length=ini.get("constrained_length", 0.0),
            unconstrained_length_l=ini.get("unconstrained_length", 0.06),
            pressure_P=ini.get("pressure", 10e3))
    except ValueError as e:
        raise ScenarioError(f"at initial: {e}") from e

    lim_doc = document.get("limits", {})
    box = lim_doc.get("box", [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    try:
        limits = WorkspaceLimits(
            min_standoff=lim_doc.get("min_standoff", 0.06),
            box_lo=np.array(box[0]), box_hi=np.array(box[1]),
            max_speed=lim_doc.get("max_speed", 0.02),
            max_ang_speed=lim_doc.get("max_ang_speed", 1.0))
    except ValueError as e:
        raise ScenarioError(f"at limits: {e}") from e

    noise_doc = document.get("noise", {})
    noise = LocalizationNoise(
        sigma_pos=noise_doc.get("sigma_pos", 1.0e-3),
        sigma_ang=noise_doc.get("sigma_ang", math.radians(1.5)))

    script = []
    for k, entry in enumerate(document.get("script", [])):
        epm = entry.get("epm")
        try:
            pose = (EpmPose(np.array(epm["position"]),
                            np.array(epm["moment_dir"]))
                    if epm else None)
            cmd = SimCommand(epm_pose=pose,
                             pressure_setpoint=entry.get("pressure"),
                             grow_rate=entry.get("grow_rate"))
        except ValueError as e:
            raise ScenarioError(f"at script/{k}: {e}") from e
        script.append((float(entry["t"]), cmd))
    script.sort(key=lambda pair: pair[0])

    epm_spec, epm_scale = _magnet(document["epm"], _DEFAULT_EPM)
    ipm_spec, _ = _magnet(ipm_doc, _DEFAULT_IPM)
    retr = RetractionModel(**document.get("retraction", {}))

    return Scenario(environment=env, vine_params=params, initial_state=state,
                    epm_spec=epm_spec, ipm_spec=ipm_spec,
                    epm_moment_scale=epm_scale, limits=limits, noise=noise,
                    script=tuple(script), rng_seed=document["seed"],
                    dt=document["dt"], mode=document.get("mode", "surface"),
                    retraction=retr,
                    growth_gate_deg=document.get("growth_gate_deg", 75.0),
                    name=document.get("name", ""))


def scenario_path(name: str):
    """Path to a bundled scenario fixture, e.g. 'tube90.scn'."""
    return importlib.resources.files("magvine.scenarios") / name


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())
