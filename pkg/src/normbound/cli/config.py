"""Strict JSON run configuration.

Unknown keys are rejected and every error names the JSON path of the
offending field.  Defaults filled in during parsing are recorded in
``RunConfig.provenance`` so that outputs can echo them.

A system is given either explicitly::

    "system": {"A": [[0, 1], [{"constant": -4, "harmonics": [[-0.5, 3.14, 0]]}, -0.2]],
               "f": [[], [{"coefficient": -0.1, "exponents": [0, 3]}]],
               "F": [0, {"harmonics": [[0.01, 6.28, 0]]}],
               "t0": 0, "horizon": 50}

or through the forced oscillator shorthand ``"system": {"oscillator": {...}}``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

from ..model import (ForcingTerm, MatrixFunction, ModelError, Monomial, PolynomialField,
                     SystemSpec, TrigAffineScalar, oscillator_system)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


OSCILLATOR_DEFAULTS = {
    "omega0": 2.0, "alpha1": 0.2, "alpha2": 0.1, "a": 0.0, "omega2": 2 * math.pi,
    "a1": 0.0, "r1": 0.0, "a2": 0.0, "r2": 0.0, "cubic_on": 1,
}

DEFAULTS = {
    "normalization": "spectral",
    "tolerances": {"rel": 1e-10, "abs": 1e-14, "output_step": 0.01},
    "analysis": {"t_star_fraction": 0.1, "restarts": 8, "window": None, "x0": 0.5,
                 "lipschitz_radius": None},
    "regions": {"mode": "sup", "mu_window": None},
    "validation": {"samples": 100, "seed": 0, "rel_slack": 1e-3},
    "output_dir": "out",
}
SYSTEM_DEFAULTS = {"t0": 0.0, "horizon": 50.0, "omega2_radius": None}


@dataclass(frozen=True)
class Tolerances:
    rel: float
    abs: float
    output_step: float


@dataclass(frozen=True)
class AnalysisOptions:
    t_star_fraction: float
    restarts: int
    window: tuple[float, float] | None
    x0: float
    lipschitz_radius: float | None


@dataclass(frozen=True)
class RegionOptions:
    mode: str
    mu_window: tuple[float, float] | None


@dataclass(frozen=True)
class ValidationOptions:
    samples: int
    seed: int
    rel_slack: float


@dataclass(frozen=True)
class RunConfig:
    system: SystemSpec
    normalization: str
    tolerances: Tolerances
    analysis: AnalysisOptions
    regions: RegionOptions
    validation: ValidationOptions
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _expect(value, kinds, path, what):
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise ConfigError(path, f"expected {what}, got {type(value).__name__}")
    return value


def _number(value, path, positive=False, nonnegative=False) -> float:
    _expect(value, (int, float), path, "a number")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, "must be > 0")
    if nonnegative and value < 0:
        raise ConfigError(path, "must be >= 0")
    return value


def _integer(value, path, minimum=None) -> int:
    _expect(value, int, path, "an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return int(value)


def _window(value, path):
    if value is None:
        return None
    _expect(value, list, path, "a [start, end] list or null")
    if len(value) != 2:
        raise ConfigError(path, "window needs exactly two numbers")
    a, b = (_number(v, f"{path}[{i}]") for i, v in enumerate(value))
    if not b > a:
        raise ConfigError(path, "window end must exceed its start")
    return (a, b)


def _keys(obj, allowed, path):
    _expect(obj, dict, path, "an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _section(raw, name, defaults, provenance):
    """Merge a config section over its defaults, recording which defaults were used."""
    given = raw.get(name, {})
    _keys(given, defaults, name)
    merged = {}
    for key, default in defaults.items():
        if key in given:
            merged[key] = given[key]
        else:
            merged[key] = copy.deepcopy(default)
            provenance[f"{name}.{key}"] = default
    return merged


def parse_scalar(value, path) -> TrigAffineScalar:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return TrigAffineScalar(_number(value, path))
    _keys(value, {"constant", "harmonics"}, path)
    constant = _number(value.get("constant", 0.0), f"{path}.constant")
    harmonics = value.get("harmonics", [])
    _expect(harmonics, list, f"{path}.harmonics", "a list")
    parsed = []
    for i, h in enumerate(harmonics):
        hp = f"{path}.harmonics[{i}]"
        _expect(h, list, hp, "[amplitude, frequency, phase]")
        if len(h) != 3:
            raise ConfigError(hp, "harmonic needs [amplitude, frequency, phase]")
        amp, freq, phase = (_number(v, f"{hp}[{j}]") for j, v in enumerate(h))
        if freq < 0:
            raise ConfigError(f"{hp}[1]", "frequency must be >= 0")
        parsed.append((amp, freq, phase))
    return TrigAffineScalar(constant, tuple(parsed))


def _parse_explicit(system, path) -> tuple:
    A_raw = system.get("A")
    if A_raw is None:
        raise ConfigError(f"{path}.A", "missing")
    _expect(A_raw, list, f"{path}.A", "a square list of rows")
    n = len(A_raw)
    if n < 1:
        raise ConfigError(f"{path}.A", "dimension must be >= 1")
    rows = []
    for i, row in enumerate(A_raw):
        _expect(row, list, f"{path}.A[{i}]", "a row list")
        if len(row) != n:
            raise ConfigError(f"{path}.A[{i}]", f"row has {len(row)} entries, expected {n}")
        rows.append(tuple(parse_scalar(v, f"{path}.A[{i}][{j}]") for j, v in enumerate(row)))
    A = MatrixFunction(tuple(rows))

    f_raw = system.get("f", [[] for _ in range(n)])
    _expect(f_raw, list, f"{path}.f", "a list of component monomial lists")
    if len(f_raw) != n:
        raise ConfigError(f"{path}.f", f"needs {n} components, got {len(f_raw)}")
    comps = []
    for i, comp in enumerate(f_raw):
        cp = f"{path}.f[{i}]"
        _expect(comp, list, cp, "a list of monomials")
        monos = []
        for j, mono in enumerate(comp):
            mp = f"{cp}[{j}]"
            _keys(mono, {"coefficient", "exponents"}, mp)
            if "exponents" not in mono:
                raise ConfigError(f"{mp}.exponents", "missing")
            exps = mono["exponents"]
            _expect(exps, list, f"{mp}.exponents", "a list of integers")
            exps = [_integer(e, f"{mp}.exponents[{k}]", 0) for k, e in enumerate(exps)]
            if len(exps) != n:
                raise ConfigError(f"{mp}.exponents", f"needs {n} exponents")
            coef = parse_scalar(mono.get("coefficient", 1.0), f"{mp}.coefficient")
            try:
                monos.append(Monomial(coef, tuple(exps)))
            except ModelError as err:
                raise ConfigError(mp, str(err)) from None
        comps.append(tuple(monos))
    f = PolynomialField(tuple(comps))

    F_raw = system.get("F", [0.0] * n)
    _expect(F_raw, list, f"{path}.F", "a list of n scalars")
    if len(F_raw) != n:
        raise ConfigError(f"{path}.F", f"needs {n} components, got {len(F_raw)}")
    F = ForcingTerm(tuple(parse_scalar(v, f"{path}.F[{i}]") for i, v in enumerate(F_raw)))
    return A, f, F


def parse_system(system, provenance, path="system") -> SystemSpec:
    _expect(system, dict, path, "an object")
    common = set(SYSTEM_DEFAULTS)
    if "oscillator" in system:
        _keys(system, common | {"oscillator"}, path)
        osc = system["oscillator"]
        _keys(osc, OSCILLATOR_DEFAULTS, f"{path}.oscillator")
        params = {}
        for key, default in OSCILLATOR_DEFAULTS.items():
            if key in osc:
                if key == "cubic_on":
                    value = _integer(osc[key], f"{path}.oscillator.{key}", 0)
                    if value not in (0, 1):
                        raise ConfigError(f"{path}.oscillator.{key}", "must be 0 or 1")
                    params[key] = value
                else:
                    params[key] = _number(osc[key], f"{path}.oscillator.{key}")
            else:
                params[key] = default
                provenance[f"{path}.oscillator.{key}"] = default
        base = oscillator_system(**params)
        A, f, F = base.A, base.f, base.F
    else:
        _keys(system, common | {"A", "f", "F", "n"}, path)
        A, f, F = _parse_explicit(system, path)
        if "n" in system and _integer(system["n"], f"{path}.n", 1) != A.n:
            raise ConfigError(f"{path}.n", f"does not match A dimension {A.n}")
    values = {}
    for key, default in SYSTEM_DEFAULTS.items():
        if key in system:
            values[key] = system[key]
        else:
            values[key] = default
            provenance[f"{path}.{key}"] = default
    t0 = _number(values["t0"], f"{path}.t0")
    horizon = _number(values["horizon"], f"{path}.horizon", positive=True)
    radius = values["omega2_radius"]
    if radius is not None:
        radius = _number(radius, f"{path}.omega2_radius", positive=True)
    try:
        return SystemSpec(A, f, F, t0=t0, horizon=horizon, omega2_radius=radius)
    except ModelError as err:
        raise ConfigError(path, str(err)) from None


def parse_config_obj(raw: dict) -> RunConfig:
    _keys(raw, set(DEFAULTS) | {"system"}, "")
    if "system" not in raw:
        raise ConfigError("system", "missing")
    provenance: dict = {}
    system = parse_system(raw["system"], provenance)

    normalization = raw.get("normalization")
    if normalization is None:
        normalization = DEFAULTS["normalization"]
        provenance["normalization"] = normalization
    if normalization not in ("identity", "spectral"):
        raise ConfigError("normalization", "must be 'identity' or 'spectral'")

    tol = _section(raw, "tolerances", DEFAULTS["tolerances"], provenance)
    tolerances = Tolerances(
        rel=_number(tol["rel"], "tolerances.rel", positive=True),
        abs=_number(tol["abs"], "tolerances.abs", positive=True),
        output_step=_number(tol["output_step"], "tolerances.output_step", positive=True),
    )
    an = _section(raw, "analysis", DEFAULTS["analysis"], provenance)
    fraction = _number(an["t_star_fraction"], "analysis.t_star_fraction", nonnegative=True)
    if fraction >= 1:
        raise ConfigError("analysis.t_star_fraction", "must be < 1")
    radius = an["lipschitz_radius"]
    analysis = AnalysisOptions(
        t_star_fraction=fraction,
        restarts=_integer(an["restarts"], "analysis.restarts", 1),
        window=_window(an["window"], "analysis.window"),
        x0=_number(an["x0"], "analysis.x0", nonnegative=True),
        lipschitz_radius=None if radius is None else _number(
            radius, "analysis.lipschitz_radius", positive=True),
    )
    rg = _section(raw, "regions", DEFAULTS["regions"], provenance)
    if rg["mode"] not in ("sup", "avg"):
        raise ConfigError("regions.mode", "must be 'sup' or 'avg'")
    regions = RegionOptions(mode=rg["mode"], mu_window=_window(rg["mu_window"], "regions.mu_window"))
    va = _section(raw, "validation", DEFAULTS["validation"], provenance)
    validation = ValidationOptions(
        samples=_integer(va["samples"], "validation.samples", 1),
        seed=_integer(va["seed"], "validation.seed", 0),
        rel_slack=_number(va["rel_slack"], "validation.rel_slack", nonnegative=True),
    )
    output_dir = raw.get("output_dir")
    if output_dir is None:
        output_dir = DEFAULTS["output_dir"]
        provenance["output_dir"] = output_dir
    _expect(output_dir, str, "output_dir", "a string")
    return RunConfig(system, normalization, tolerances, analysis, regions, validation,
                     output_dir, raw=copy.deepcopy(raw), provenance=provenance)


def parse_config(text: bytes | str) -> RunConfig:
    """Validate a UTF-8 JSON document into a RunConfig."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as err:
            raise ConfigError("", f"config is not UTF-8: {err}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return parse_config_obj(raw)


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    """Re-parse the raw config with dotted-path overrides, e.g. ``{"validation.seed": 3}``."""
    raw = copy.deepcopy(config.raw)
    for dotted, value in changes.items():
        node = raw
        *parents, last = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[last] = value
    return parse_config_obj(raw)
