"""Scenario runner: parse a JSON scenario, integrate it, verify it, write reports.

    kkgeodesics run taub-nut-bound --out-dir out
    kkgeodesics check-killing my_scenario.json --seed 3
    kkgeodesics sphere 1 8 0 0 1

A scenario argument is either a path to a JSON document or the name of a
bundled scenario (see ``kkgeodesics list``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from . import conserved as cs
from . import geometry as geo
from .dynamics import MetricEffectivePotential, PhaseState, hamiltonian, rhs_arrays
from .integrate import (
    DriftReport,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    drift_report,
    integrate,
)
from .killing import (
    laplace_obstruction,
    magnetic_laplace_obstruction,
    van_holten_residuals,
)

log = logging.getLogger("kkgeodesics")

SCHEMA = 1
PRESETS = ("taub-nut", "lee-lee", "winding-string", "extended-taub-nut", "flat-kepler", "two-center")
CHECKS = ("drift", "killing-residuals", "laplace", "conic-identity", "sphere-confinement", "tangency")
DEFAULT_THRESHOLDS = {
    "drift": 1e-8,
    "killing-residuals": 1e-8,
    "laplace": 1e-6,
    "conic-identity": 1e-8,
    "sphere-confinement": 1e-6,
    "tangency": 1e-6,
}
SURFACE_TOL = 1e-10
ENERGY_TOL = 1e-10

_METRIC_KEYS = {
    "taub-nut": {"m": 1.0, "g": None},
    "lee-lee": {"m": 1.0, "a0": 1.0, "g": None},
    "winding-string": {"U0": 0.0},
    "extended-taub-nut": {"a": None, "b": None, "c": None, "d": None},
    "flat-kepler": {"k": 1.0},
    "two-center": {"m1": None, "m2": None, "a": None, "f0": 1.0},
}
_TOP_KEYS = {"name", "reference", "preset", "metric", "q", "initial", "potential", "integrator",
             "checks", "observables", "thresholds", "residual_points", "seed", "sample_shell",
             "direction", "mass", "output"}


class ConfigError(ValueError):
    """Base class for scenario documents that cannot be run (exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(ConfigError):
    pass


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    preset: str
    metric: dict
    q: float
    initial: dict
    potential: dict
    integrator: IntegratorConfig
    checks: tuple
    observables: tuple
    thresholds: dict
    residual_points: int = 100
    seed: int = 0
    sample_shell: tuple = (1.5, 4.0)
    direction: Optional[tuple] = None
    mass: float = 1.0
    out_dir: str = "."
    reference: str = ""


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ParseError(path, "number must be finite")
    return float(value)


def _vec3(value, path: str) -> tuple:
    if not isinstance(value, list) or len(value) != 3:
        raise ParseError(path, f"expected a list of 3 numbers, got {value!r}")
    return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(value))


def _obj(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ParseError(path, f"expected an object, got {type(value).__name__}")
    return value


def _check_keys(doc: dict, allowed, path: str) -> None:
    for k in doc:
        if k not in allowed:
            raise ParseError(f"{path}.{k}", "unknown key")


def _parse_metric(preset: str, doc: dict) -> dict:
    spec = _METRIC_KEYS[preset]
    _check_keys(doc, spec, "$.metric")
    out = {}
    for key, default in spec.items():
        path = f"$.metric.{key}"
        if key in doc:
            out[key] = _vec3(doc[key], path) if (preset, key) == ("two-center", "a") else _num(doc[key], path)
        elif default is None and not (key == "g"):
            raise ParseError(path, "required key is missing")
        else:
            out[key] = default
    return out


def _parse_initial(doc: dict) -> dict:
    if "sphere" in doc:
        _check_keys(doc, {"sphere"}, "$.initial")
        sph = _obj(doc["sphere"], "$.initial.sphere")
        _check_keys(sph, {"mode", "polar", "azimuth", "velocity", "speed"}, "$.initial.sphere")
        mode = sph.get("mode", "circular")
        if mode not in ("circular", "tangent"):
            raise ParseError("$.initial.sphere.mode", f"expected 'circular' or 'tangent', got {mode!r}")
        out = {"sphere": {"mode": mode,
                          "polar": _num(sph.get("polar", 1.0), "$.initial.sphere.polar"),
                          "azimuth": _num(sph.get("azimuth", 0.0), "$.initial.sphere.azimuth")}}
        if mode == "tangent":
            if "velocity" not in sph:
                raise ParseError("$.initial.sphere.velocity", "tangent mode needs a velocity")
            out["sphere"]["velocity"] = _vec3(sph["velocity"], "$.initial.sphere.velocity")
            if "speed" in sph:
                out["sphere"]["speed"] = _num(sph["speed"], "$.initial.sphere.speed")
        return out
    _check_keys(doc, {"x", "Pi"}, "$.initial")
    for key in ("x", "Pi"):
        if key not in doc:
            raise ParseError(f"$.initial.{key}", "required key is missing")
    return {"x": _vec3(doc["x"], "$.initial.x"), "Pi": _vec3(doc["Pi"], "$.initial.Pi")}


def _parse_potential(preset: str, doc: dict) -> dict:
    _check_keys(doc, {"form", "beta", "gamma", "E"}, "$.potential")
    form = doc.get("form", "intrinsic")
    allowed = ("intrinsic", "two-center") if preset == "two-center" else ("intrinsic", "runge-lenz")
    if form not in allowed:
        raise ParseError("$.potential.form", f"form {form!r} is not available for preset {preset!r}")
    out = {"form": form}
    for key in ("beta", "gamma", "E"):
        if key in doc:
            out[key] = _num(doc[key], f"$.potential.{key}")
    if form == "runge-lenz":
        for key in ("beta", "gamma", "E"):
            if key not in out:
                raise ParseError(f"$.potential.{key}", "required for the runge-lenz form")
    return out


def _parse_integrator(doc: dict) -> IntegratorConfig:
    keys = ("rel_tol", "abs_tol", "t_max", "max_step", "sample_interval")
    _check_keys(doc, keys, "$.integrator")
    kw = {k: _num(doc[k], f"$.integrator.{k}") for k in keys if k in doc}
    try:
        return IntegratorConfig(**kw)
    except ValueError as exc:
        raise ValidationError(f"$.integrator: {exc}") from None


def parse_config(document: Union[str, bytes, dict]) -> ScenarioConfig:
    """Parse and validate a scenario document, applying defaults."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"malformed JSON: {exc}") from None
    else:
        doc = document
    doc = _obj(doc, "$")
    _check_keys(doc, _TOP_KEYS, "$")

    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ParseError("$.name", "scenario name must be a non-empty string")
    preset = doc.get("preset")
    if preset not in PRESETS:
        raise ParseError("$.preset", f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    metric = _parse_metric(preset, _obj(doc.get("metric", {}), "$.metric"))
    q = _num(doc.get("q", 0.0), "$.q")
    if "initial" not in doc:
        raise ParseError("$.initial", "required key is missing")
    initial = _parse_initial(_obj(doc["initial"], "$.initial"))
    potential = _parse_potential(preset, _obj(doc.get("potential", {}), "$.potential"))
    integ = _parse_integrator(_obj(doc.get("integrator", {}), "$.integrator"))

    checks = doc.get("checks", ["drift", "killing-residuals"])
    if not isinstance(checks, list):
        raise ParseError("$.checks", "expected a list")
    for i, c in enumerate(checks):
        if c not in CHECKS:
            raise ParseError(f"$.checks[{i}]", f"unknown check {c!r}")
    default_obs = (["H", "q", "Ja", "Q2", "Ka"] if preset == "two-center"
                   else ["H", "q", "Jx", "Jy", "Jz", "Kx", "Ky", "Kz"])
    observables = doc.get("observables", default_obs)
    if not isinstance(observables, list) or not all(isinstance(o, str) for o in observables):
        raise ParseError("$.observables", "expected a list of observable names")

    thresholds = dict(DEFAULT_THRESHOLDS)
    th = _obj(doc.get("thresholds", {}), "$.thresholds")
    _check_keys(th, CHECKS, "$.thresholds")
    for k, v in th.items():
        thresholds[k] = _num(v, f"$.thresholds.{k}")

    npts = doc.get("residual_points", 100)
    if isinstance(npts, bool) or not isinstance(npts, int) or npts < 1:
        raise ParseError("$.residual_points", "expected a positive integer")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ParseError("$.seed", "expected a non-negative integer")
    shell = doc.get("sample_shell", [1.5, 4.0])
    if not isinstance(shell, list) or len(shell) != 2:
        raise ParseError("$.sample_shell", "expected [r_min, r_max]")
    shell = (_num(shell[0], "$.sample_shell[0]"), _num(shell[1], "$.sample_shell[1]"))
    if not 0 < shell[0] < shell[1]:
        raise ValidationError("$.sample_shell: need 0 < r_min < r_max")
    direction = _vec3(doc["direction"], "$.direction") if "direction" in doc else None
    mass = _num(doc.get("mass", 1.0), "$.mass")
    out = _obj(doc.get("output", {}), "$.output")
    _check_keys(out, {"dir"}, "$.output")
    out_dir = out.get("dir", ".")
    if not isinstance(out_dir, str):
        raise ParseError("$.output.dir", "expected a string")
    reference = doc.get("reference", "")
    if not isinstance(reference, str):
        raise ParseError("$.reference", "expected a string")

    cfg = ScenarioConfig(name, preset, metric, q, initial, potential, integ, tuple(checks),
                         tuple(observables), thresholds, npts, seed, shell, direction, mass,
                         out_dir, reference)
    build_system(cfg)  # domain validation
    return cfg


# -- assembled system -----------------------------------------------------------


@dataclass
class System:
    """Everything a scenario needs once its parameters have been resolved."""

    spec: geo.MetricSpec
    state0: PhaseState
    energy: float
    beta: float
    gamma: float
    g: float
    eff: MetricEffectivePotential
    registry: dict
    tc: Optional[cs.TwoCenterSpec] = None
    surface: Any = None
    warnings: list = field(default_factory=list)


def _radial_metric(preset: str, p: dict) -> geo.MetricSpec:
    if preset == "taub-nut":
        return geo.taub_nut(p["m"], p["g"])
    if preset == "lee-lee":
        return geo.lee_lee(p["m"], p["a0"], p["g"])
    if preset == "winding-string":
        return geo.winding_string(1.0, geo.ConstantPotential(p["U0"]))
    if preset == "extended-taub-nut":
        return geo.extended_taub_nut(p["a"], p["b"], p["c"], p["d"], 1.0)
    return geo.flat_kepler(p["k"])


def _intrinsic_parameters(preset: str, p: dict, spec: geo.MetricSpec, q: float, E: float):
    if preset == "taub-nut":
        return cs.taub_nut_runge_lenz_parameters(p["m"], q, E)
    if preset == "lee-lee":
        return cs.lee_lee_runge_lenz_parameters(p["m"], p["a0"], q, E)
    if preset == "winding-string":
        return cs.winding_string_runge_lenz_parameters(q, p["U0"], E)
    if preset == "extended-taub-nut":
        return cs.extended_taub_nut_runge_lenz_parameters(p["a"], p["b"], p["c"], p["d"], q, E)
    return -p["k"], 0.5 * q * q - E


def _check_energy(cfg_E: Optional[float], H: float, warnings: list) -> None:
    if cfg_E is not None and abs(cfg_E - H) > ENERGY_TOL * max(1.0, abs(H)):
        msg = (f"configured E={cfg_E!r} differs from the realized H={H!r}; "
               "the realized value is used for the effective potential")
        log.warning(msg)
        warnings.append(msg)


def _build_two_center(cfg: ScenarioConfig, warnings: list):
    p = cfg.metric
    try:
        tc = cs.TwoCenterSpec(p["m1"], p["m2"], p["a"], p["f0"])
    except ValueError as exc:
        raise ValidationError(f"$.metric: {exc}") from None
    needs_sphere = ("sphere" in cfg.initial or "Ka" in cfg.observables
                    or {"sphere-confinement", "tangency"} & set(cfg.checks))
    if needs_sphere and tc.m1 == tc.m2:
        raise ValidationError(
            "equal masses m1 = m2: the confinement sphere degenerates to the median plane "
            "normal to a, where no Runge-Lenz scalar K_a is constructed; use unequal masses")
    surface = cs.two_center_sphere(tc)
    q = cfg.q
    pot = cfg.potential
    gamma = pot.get("gamma", 0.0)
    cfg_E = pot.get("E")

    if "sphere" in cfg.initial:
        sph = cfg.initial["sphere"]
        if sph["mode"] == "circular":
            if pot["form"] != "two-center":
                raise ValidationError("$.potential.form: circular sphere orbits need the two-center form")
            try:
                state0, beta, E_gen = cs.sphere_circular_state(tc, surface, sph["polar"], sph["azimuth"],
                                                               q, gamma)
            except (ValueError, geo.DomainError) as exc:
                raise ValidationError(f"$.initial.sphere: {exc}") from None
            if "beta" in pot and abs(pot["beta"] - beta) > 1e-10 * max(1.0, abs(beta)):
                raise ValidationError(f"$.potential.beta: circular orbit at this point needs beta={beta!r}")
            E = E_gen if cfg_E is None else cfg_E
        else:
            # the velocity is read in the effective time, where Pi = dx/dtau
            state0 = cs.sphere_tangent_state(tc, surface, sph["polar"], sph["azimuth"], sph["velocity"],
                                             q, sph.get("speed"), f_at=lambda x: 1.0)
            beta = pot.get("beta")
            if beta is None:
                raise ValidationError("$.potential.beta: required for tangent sphere data")
            E = None
    else:
        state0 = PhaseState(cfg.initial["x"], cfg.initial["Pi"], q)
        beta = pot.get("beta")
        E = cfg_E

    if pot["form"] == "two-center":
        if beta is None:
            raise ValidationError("$.potential.beta: required for the two-center form")
        if E is None:
            # on shell: E = Pi^2/2 + fW(x0)
            E = 0.5 * float(state0.Pi @ state0.Pi) + cs.two_center_effective_potential(tc, q, beta, gamma, state0.x)
        potential = geo.TwoCenterPotential((tc.m1, tc.m2), (tuple(tc.avec), tuple(-tc.avec)), q, beta, gamma, E)
        spec = tc.metric(potential)
    else:
        spec = tc.metric()
    try:
        H = hamiltonian(state0, spec)
    except geo.DomainError as exc:
        raise ValidationError(f"$.initial: {exc}") from None
    if pot["form"] == "two-center":
        _check_energy(E, H, warnings)
    else:
        _check_energy(cfg_E, H, warnings)
        # fW = q^2 S^2/2 + (q^2 f0 - E) S + const for U = 0
        beta = q * q * tc.f0 - H
        gamma = 0.5 * q * q * tc.f0**2 + H * (1 - tc.f0)

    if needs_sphere:
        dev = abs(surface.deviation(state0.x))
        if dev > SURFACE_TOL:
            raise ValidationError(f"$.initial: x is off the confinement sphere by {dev:.3e} (relative)")
        pn = float(np.linalg.norm(state0.Pi))
        if pn > 0 and abs(float(state0.Pi @ surface.normal(state0.x))) > SURFACE_TOL * pn:
            raise ValidationError("$.initial: Pi is not tangent to the confinement sphere")
    return spec, state0, H, beta, gamma, tc, surface


def build_system(cfg: ScenarioConfig) -> System:
    """Resolve the metric, potential, initial state and observables of a scenario."""
    warnings: list = []
    q = cfg.q
    tc = surface = None
    if cfg.preset == "two-center":
        spec, state0, H, beta, gamma, tc, surface = _build_two_center(cfg, warnings)
        g = tc.m1 + tc.m2
    else:
        base = _radial_metric(cfg.preset, cfg.metric)
        g = base.g
        state0 = PhaseState(cfg.initial["x"], cfg.initial["Pi"], q)
        pot = cfg.potential
        if pot["form"] == "runge-lenz":
            potential = geo.RadialRungeLenzPotential(q, g, pot["beta"], pot["gamma"], pot["E"])
            spec = base.with_potential(potential)
            beta, gamma = pot["beta"], pot["gamma"]
        else:
            spec = base
        try:
            H = hamiltonian(state0, spec)
        except geo.DomainError as exc:
            raise ValidationError(f"$.initial: {exc}") from None
        _check_energy(pot.get("E"), H, warnings)
        if pot["form"] == "intrinsic":
            beta, gamma = _intrinsic_parameters(cfg.preset, cfg.metric, spec, q, H)
            for key, val in (("beta", beta), ("gamma", gamma)):
                if key in pot and abs(pot[key] - val) > 1e-10 * max(1.0, abs(val)):
                    raise ValidationError(f"$.potential.{key}: intrinsic potential implies {key}={val!r}")

    if "Ka" in cfg.observables and q == 0:
        raise ValidationError("$.observables: K_a is defined for charged motion only (q != 0)")
    if "Kn" in cfg.observables and cfg.direction is None:
        raise ValidationError("$.direction: the Kn observable needs a direction")
    if cfg.direction is not None and not np.linalg.norm(cfg.direction) > 0:
        raise ValidationError("$.direction: must be nonzero")
    n = None if cfg.direction is None else np.asarray(cfg.direction) / np.linalg.norm(cfg.direction)
    kepler_k = cfg.metric.get("k", 1.0)
    registry = cs.observable_registry(spec, q, beta=beta, g=g, tc=tc, n=n, mass=cfg.mass,
                                      kepler_k=kepler_k)
    for i, name in enumerate(cfg.observables):
        if name not in registry:
            raise ValidationError(f"$.observables[{i}]: observable {name!r} is not available for this scenario")
    radial_only = {"conic-identity"} & set(cfg.checks)
    if cfg.preset == "two-center" and radial_only:
        raise ValidationError("$.checks: conic-identity applies to radial presets only")
    if cfg.preset != "two-center" and {"sphere-confinement", "tangency"} & set(cfg.checks):
        raise ValidationError("$.checks: sphere checks apply to the two-center preset only")
    eff = MetricEffectivePotential(spec, q, H)
    return System(spec, state0, H, beta, gamma, g, eff, registry, tc, surface, warnings)


# -- verification -----------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": _jsonable(self.measured), "threshold": self.threshold,
                "passed": self.passed, "detail": _jsonable(self.detail)}


def _check(name: str, measured: float, threshold: float, **detail) -> CheckResult:
    return CheckResult(name, measured, threshold, bool(measured < threshold), detail)


@dataclass
class RunReport:
    name: str
    checks: list
    drift: Optional[DriftReport] = None
    residuals: dict = field(default_factory=dict)
    seed: int = 0
    warnings: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "scenario": self.name, "passed": self.passed, "seed": self.seed,
                "checks": [c.to_dict() for c in self.checks], "warnings": self.warnings,
                "files": self.files}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def sample_points(cfg: ScenarioConfig, system: System, seed: int) -> dict:
    """Seeded residual sample points: 'shell' everywhere, 'sphere' on the confinement sphere."""
    rng = np.random.default_rng(seed)
    from .dynamics import random_state

    shell = [random_state(rng, system.spec, cfg.q, cfg.sample_shell).x for _ in range(cfg.residual_points)]
    pts = {"shell": np.array(shell)}
    if isinstance(system.surface, cs.SphereSpec):
        sph = []
        axis = system.tc.axis
        while len(sph) < cfg.residual_points:
            # stay off the poles and away from the centers
            polar = rng.uniform(0.05 * np.pi, 0.95 * np.pi)
            x = system.surface.point(polar, rng.uniform(0, 2 * np.pi), axis)
            if min(np.linalg.norm(x - system.tc.avec), np.linalg.norm(x + system.tc.avec)) > 0.1:
                sph.append(x)
        pts["sphere"] = np.array(sph)
    return pts


def coefficient_sets(system: System, q: float) -> list:
    """(coefficients, point sets where the hierarchy is asserted, point sets where it is only reported)."""
    out = [(cs.hamiltonian_coefficients(system.eff), ("shell", "sphere", "trajectory"), ())]
    if system.tc is None:
        for e, axis in zip(np.eye(3), "xyz"):
            Jc = cs.angular_momentum_coefficients(e, q, system.g)
            Jc.name = "J" + axis
            Kc = cs.runge_lenz_coefficients(e, q, system.g, system.beta)
            Kc.name = "K" + axis
            out.append((Jc, ("shell", "trajectory"), ()))
            out.append((Kc, ("shell", "trajectory"), ()))
        return out
    tc = system.tc
    out.append((cs.two_center_Ja_coefficients(tc, q), ("shell", "sphere", "trajectory"), ()))
    if q != 0 and isinstance(system.surface, cs.SphereSpec):
        # zeroth order holds on the sphere only; off-sphere values are informational
        out.append((cs.two_center_Ka_coefficients(tc, q, system.beta), ("sphere", "trajectory"), ("shell",)))
    out.append((cs.two_center_Q_coefficients(tc, q), (), ("shell", "sphere", "trajectory")))
    return out


def killing_residuals(system: System, q: float, points: dict) -> tuple[dict, float]:
    """Per coefficient set and point set: max residual of each constraint order."""
    summary = {}
    worst = 0.0
    for coeffs, asserted, informational in coefficient_sets(system, q):
        entry = {}
        for label in asserted + informational:
            if label not in points or len(points[label]) == 0:
                continue
            orders = np.zeros(4)
            for x in points[label]:
                orders = np.maximum(orders, van_holten_residuals(coeffs, system.spec, system.eff, q, x).as_tuple())
            is_asserted = label in asserted
            entry[label] = {"order0": orders[0], "order1": orders[1], "order2": orders[2],
                            "order3": orders[3], "asserted": is_asserted}
            if is_asserted:
                worst = max(worst, float(orders.max()))
        summary[coeffs.name] = entry
    return summary, worst


def laplace_check(cfg: ScenarioConfig, system: System, points: dict) -> CheckResult:
    q = cfg.q
    shell = points["shell"]
    if system.tc is None:
        vals = [abs(laplace_obstruction(system.eff, q, system.g, x)) for x in shell]
        return _check("laplace", max(vals), cfg.thresholds["laplace"], form="radial", points=len(vals))
    vals = [abs(magnetic_laplace_obstruction(system.eff, system.spec, q, x)) for x in shell]
    radial = [abs(laplace_obstruction(system.eff, q, system.g, x)) for x in shell]
    return _check("laplace", max(vals), cfg.thresholds["laplace"], form="magnetic", points=len(vals),
                  radial_form_max=max(radial))


def _drift_check(cfg: ScenarioConfig, report: DriftReport) -> CheckResult:
    worst = 0.0
    per = {}
    for name, d in report.entries.items():
        # relative where the initial value is nonzero, absolute otherwise
        m = d.max_rel if d.initial != 0 else d.max_abs
        per[name] = m
        worst = max(worst, m)
    return _check("drift", worst, cfg.thresholds["drift"], observables=per)


def _conic_check(cfg: ScenarioConfig, system: System, traj: Trajectory) -> CheckResult:
    g, beta = system.g, system.beta
    lhs = np.array([float(cs.runge_lenz_radial(s, g, beta) @ s.x) - beta * float(np.linalg.norm(s.x))
                    for s in traj.phase_states()])
    defects = np.array([cs.conic_defect(s, g, beta) for s in traj.phase_states()])
    scale = max(1.0, abs(lhs[0]))
    constancy = float(np.max(np.abs(lhs - lhs[0]))) / scale
    identity = float(np.max(np.abs(defects))) / scale
    return _check("conic-identity", max(constancy, identity), cfg.thresholds["conic-identity"],
                  constancy=constancy, identity=identity, initial=lhs[0])


def tangency_angles(system: System, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Angle of the non-magnetic force to x - rho a and to x, per sample (radians, sign-blind)."""
    center = system.surface.center
    to_center = []
    to_origin = []
    for s in traj.phase_states():
        xdot, dPi = rhs_arrays(s.x, s.Pi, s.q, system.spec)
        B = geo.magnetic_field(system.spec, s.x).B
        force = dPi - s.q * np.cross(xdot, B)
        fn = np.linalg.norm(force)
        for ref, acc in ((s.x - center, to_center), (s.x, to_origin)):
            c = abs(float(force @ ref)) / (fn * np.linalg.norm(ref)) if fn > 0 else 1.0
            acc.append(math.acos(min(1.0, c)))
    return np.array(to_center), np.array(to_origin)


def _sphere_check(cfg: ScenarioConfig, system: System, traj: Trajectory) -> CheckResult:
    dev = max(abs(system.surface.deviation(x)) for x in traj.states[:, :3])
    s = system.surface
    return _check("sphere-confinement", dev, cfg.thresholds["sphere-confinement"],
                  rho=s.rho, center=s.center, radius=s.radius)


def _tangency_check(cfg: ScenarioConfig, system: System, traj: Trajectory) -> CheckResult:
    to_center, to_origin = tangency_angles(system, traj)
    return _check("tangency", float(to_center.max()), cfg.thresholds["tangency"],
                  reference="x - rho a", max_angle_to_x=float(to_origin.max()))


# -- output ----------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, traj: Trajectory, names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x1", "x2", "x3", "Pi1", "Pi2", "Pi3", *names])
        cols = [traj.observables[n] for n in names]
        for i, t in enumerate(traj.times):
            w.writerow([_fmt(t), *(_fmt(v) for v in traj.states[i]), *(_fmt(c[i]) for c in cols)])


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2) + "\n")


def _resolve_seed(cfg: ScenarioConfig, seed: Optional[int]) -> int:
    return cfg.seed if seed is None else seed


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None,
                 seed: Optional[int] = None, write: bool = True) -> RunReport:
    """Integrate a scenario, run its checks and write CSV / drift / residual / report files."""
    system = build_system(cfg)
    seed = _resolve_seed(cfg, seed)
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    report = RunReport(cfg.name, [], seed=seed, warnings=list(system.warnings))

    traj: Optional[Trajectory] = None
    try:
        traj = integrate(system.state0, system.spec, cfg.integrator)
        report.checks.append(_check("integration", 0.0 if traj.status == "ok" else 1.0, 0.5,
                                    status=traj.status, steps=traj.n_steps, rejected=traj.n_rejected,
                                    samples=len(traj)))
    except (IntegrationError, geo.DomainError) as exc:
        partial = getattr(exc, "trajectory", None)
        if isinstance(partial, Trajectory) and len(partial) > 0:
            traj = partial
        report.checks.append(_check("integration", 1.0, 0.5, status="error", error=str(exc)))

    if traj is not None:
        obs = {n: system.registry[n] for n in cfg.observables}
        report.drift = drift_report(traj, obs)
        if "drift" in cfg.checks:
            report.checks.append(_drift_check(cfg, report.drift))
        if "conic-identity" in cfg.checks:
            report.checks.append(_conic_check(cfg, system, traj))
        if "sphere-confinement" in cfg.checks:
            report.checks.append(_sphere_check(cfg, system, traj))
        if "tangency" in cfg.checks:
            report.checks.append(_tangency_check(cfg, system, traj))

    if {"killing-residuals", "laplace"} & set(cfg.checks):
        points = sample_points(cfg, system, seed)
        if "killing-residuals" in cfg.checks:
            if traj is not None:
                points["trajectory"] = traj.states[:, :3]
            report.residuals, worst = killing_residuals(system, cfg.q, points)
            report.checks.append(_check("killing-residuals", worst, cfg.thresholds["killing-residuals"],
                                        points={k: len(v) for k, v in points.items()}))
        if "laplace" in cfg.checks:
            report.checks.append(laplace_check(cfg, system, points))

    if write:
        out.mkdir(parents=True, exist_ok=True)
        files = {"report": out / f"{cfg.name}.report.json"}
        if traj is not None:
            files["trajectory"] = out / f"{cfg.name}.csv"
            write_csv(files["trajectory"], traj, cfg.observables)
        if report.drift is not None:
            files["drift"] = out / f"{cfg.name}.drift.json"
            _write_json(files["drift"], {"schema": SCHEMA, "scenario": cfg.name,
                                         "drift": report.drift.to_dict()})
        if report.residuals:
            files["residuals"] = out / f"{cfg.name}.residuals.json"
            _write_json(files["residuals"], {"schema": SCHEMA, "scenario": cfg.name, "seed": seed,
                                             "points": cfg.residual_points, "residuals": report.residuals})
        report.files = {k: str(v) for k, v in files.items()}
        _write_json(files["report"], report.to_dict())
    return report


def check_killing(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None,
                  seed: Optional[int] = None, write: bool = True) -> RunReport:
    """Hierarchy residuals and Laplace obstruction at sampled points, without integrating."""
    system = build_system(cfg)
    seed = _resolve_seed(cfg, seed)
    report = RunReport(cfg.name, [], seed=seed, warnings=list(system.warnings))
    points = sample_points(cfg, system, seed)
    report.residuals, worst = killing_residuals(system, cfg.q, points)
    report.checks.append(_check("killing-residuals", worst, cfg.thresholds["killing-residuals"],
                                points={k: len(v) for k, v in points.items()}))
    if "laplace" in cfg.checks:
        report.checks.append(laplace_check(cfg, system, points))
    if write:
        out = Path(cfg.out_dir if out_dir is None else out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{cfg.name}.residuals.json"
        _write_json(path, {"schema": SCHEMA, "scenario": cfg.name, "seed": seed,
                           "points": cfg.residual_points, "residuals": report.residuals,
                           "checks": [c.to_dict() for c in report.checks]})
        report.files = {"residuals": str(path)}
    return report


# -- bundled scenarios ------------------------------------------------------------


def bundled_scenarios() -> list[str]:
    root = resources.files("kkgeodesics") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """Parse a scenario from a file path or a bundled scenario name."""
    path = Path(name_or_path)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("kkgeodesics") / "scenarios" / f"{name_or_path}.json"
        if not res.is_file():
            raise ParseError("$", f"no such file or bundled scenario: {name_or_path}")
        text = res.read_text(encoding="utf-8")
    return parse_config(text)


def sphere_document(m1: float, m2: float, a) -> dict:
    tc = cs.TwoCenterSpec(m1, m2, a)
    s = cs.two_center_sphere(tc)
    if isinstance(s, cs.MedianPlane):
        return {"schema": SCHEMA, "kind": "median-plane", "normal": s.normal.tolist()}
    return {"schema": SCHEMA, "kind": "sphere", "rho": s.rho, "center": s.center.tolist(), "radius": float(s.radius)}


# -- command line -----------------------------------------------------------------


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "tol", None) is not None:
        try:
            integ = replace(cfg.integrator, rel_tol=args.tol, abs_tol=args.tol * 1e-2)
        except ValueError as exc:
            raise ValidationError(f"--tol: {exc}") from None
        cfg = replace(cfg, integrator=integ)
    return cfg


def _print_report(report: RunReport) -> None:
    print(f"[{'PASS' if report.passed else 'FAIL'}] {report.name}")
    for c in report.checks:
        print(f"  {'pass' if c.passed else 'FAIL'}  {c.name:<20s} {c.measured:.3e} < {c.threshold:.1e}")
    for w in report.warnings:
        print(f"  warning: {w}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kkgeodesics", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=None, help="directory for CSV/JSON output")
        p.add_argument("--tol", type=float, default=None, help="integrator rel_tol (abs_tol = tol/100)")
        p.add_argument("--seed", type=int, default=None, help="seed for residual sample points")

    p = sub.add_parser("run", help="integrate and verify one or more scenarios")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
    common(p)
    p = sub.add_parser("check-killing", help="hierarchy residuals only")
    p.add_argument("configs", nargs="+")
    common(p)
    p = sub.add_parser("sphere", help="print the two-center confinement sphere")
    for name in ("m1", "m2", "ax", "ay", "az"):
        p.add_argument(name, type=float)
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for name in bundled_scenarios():
            print(name)
        return 0
    if args.command == "sphere":
        try:
            doc = sphere_document(args.m1, args.m2, (args.ax, args.ay, args.az))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(json.dumps(doc, indent=2))
        return 0
    try:
        cfgs = [_apply_overrides(load_scenario(c), args) for c in args.configs]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        print("config error: --seed must be non-negative", file=sys.stderr)
        return 2
    runner = run_scenario if args.command == "run" else check_killing

    def one(cfg):
        return runner(cfg, out_dir=args.out_dir, seed=args.seed)

    jobs = max(1, getattr(args, "jobs", 1))
    if jobs > 1 and len(cfgs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(one, cfgs))
    else:
        reports = [one(c) for c in cfgs]
    for r in reports:
        _print_report(r)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
