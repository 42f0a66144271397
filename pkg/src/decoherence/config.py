"""Experiment configuration: schema, defaults and aggregated validation.

A configuration is one JSON document::

    {"recipe": "fig3_qbm", "seed": 0, "parallelism": 1, "output_dir": null,
     "model": {...}, "sweep": {"parameter": "gamma0", "values": [...]},
     "analysis": {...}}

Every section is filled from the recipe's defaults; unknown keys are errors.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError
from .spin_model import AXES, MAX_DENSE_SPINS

TOP_LEVEL = ("recipe", "seed", "parallelism", "output_dir", "model", "sweep", "analysis")


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True)
class Field:
    default: Any
    check: Callable[[Any], str | None]


def positive(v):
    return None if _num(v) and v > 0 else "must be a positive number"


def non_negative(v):
    return None if _num(v) and v >= 0 else "must be a non-negative number"


def spins(v):
    if not _int(v) or v < 1:
        return "must be a positive integer"
    if v > MAX_DENSE_SPINS:
        return f"must be at most {MAX_DENSE_SPINS}"
    return None


def axes(v):
    if not isinstance(v, list) or not v or any(a not in AXES for a in v):
        return f"must be a non-empty list drawn from {list(AXES)}"
    return None


def optional_int_at_least(lo):
    def check(v):
        return None if v is None or (_int(v) and v >= lo) else f"must be null or an integer >= {lo}"
    return check


def int_at_least(lo):
    def check(v):
        return None if _int(v) and v >= lo else f"must be an integer >= {lo}"
    return check


def optional_positive(v):
    return None if v is None else positive(v)


def positive_list(v):
    if not isinstance(v, list) or not v or not all(_num(x) and x > 0 for x in v):
        return "must be a non-empty list of positive numbers"
    return None


def interval(v):
    if not (isinstance(v, list) and len(v) == 2 and all(_num(x) and x >= 0 for x in v) and v[0] < v[1]):
        return "must be [lo, hi] with 0 <= lo < hi"
    return None


def boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def traces(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list of {gamma0, t0} objects"
    for item in v:
        if not isinstance(item, dict) or set(item) != {"gamma0", "t0"}:
            return "each trace needs exactly the keys gamma0 and t0"
        if not (_num(item["gamma0"]) and item["gamma0"] > 0 and _num(item["t0"]) and item["t0"] > 0):
            return "trace gamma0 and t0 must be positive"
    return None


SPIN_MODEL = {
    "n_spins": Field(12, spins),
    "include_axes": Field(list(AXES), axes),
}


def _qbm_model(gamma0=None, temperature=2.5e4, x0=10.0):
    fields = {
        "cutoff": Field(500.0, positive),
        "temperature": Field(temperature, non_negative),
        "omega0": Field(1.0, positive),
        "x0": Field(x0, positive),
        "delta": Field(1.0, positive),
    }
    if gamma0 is not None:
        fields = {"gamma0": Field(gamma0, non_negative), **fields}
    return fields


def _decade(lo, hi, n=5):
    return [lo * (hi / lo) ** (k / (n - 1)) for k in range(n)]


@dataclass(frozen=True)
class RecipeSchema:
    model: dict[str, Field]
    sweep_parameter: str | None
    sweep_values: list | None
    analysis: dict[str, Field] = field(default_factory=dict)
    description: str = ""


SCHEMAS: dict[str, RecipeSchema] = {
    "fig1_overlap": RecipeSchema(
        model=SPIN_MODEL,
        sweep_parameter="lambda",
        sweep_values=[1.0, 2.0],
        analysis={
            "bins": Field(None, optional_int_at_least(8)),
            "reference_index": Field(None, optional_int_at_least(0)),
            "central_widths": Field(3.0, positive),
            "tail_start_widths": Field(5.0, positive),
            "v2_window": Field(0.15, optional_positive),
        },
        description="DOS histogram, overlap profile, Lorentzian and tail fits per coupling",
    ),
    "fig2_crossover": RecipeSchema(
        model=SPIN_MODEL,
        sweep_parameter="lambda",
        sweep_values=[0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 4.0, 8.0],
        analysis={
            "n_times": Field(400, int_at_least(20)),
            "floor": Field(1e-3, positive),
            "reference_states": Field(1, int_at_least(1)),
            "predict": Field(True, boolean),
            "v2_window": Field(0.15, optional_positive),
        },
        description="echo traces across a coupling scan with exponential/Gaussian/convolution fits",
    ),
    "spin_scaling": RecipeSchema(
        model={**SPIN_MODEL, "n_seeds": Field(3, int_at_least(1))},
        sweep_parameter="lambda",
        sweep_values=[0.05, 0.07, 0.1, 0.14, 0.2, 4.0, 6.0, 8.0, 12.0, 16.0],
        analysis={
            "weak_max": Field(0.5, positive),
            "reference_states": Field(16, int_at_least(1)),
            "n_times": Field(200, int_at_least(20)),
            "weak_stop": Field(0.5, positive),
            "floor": Field(1e-2, positive),
            "v2_window": Field(0.15, optional_positive),
        },
        description="seed-averaged decay rates in the weak and strong coupling limits",
    ),
    "fig3_qbm": RecipeSchema(
        model=_qbm_model(),
        sweep_parameter="gamma0",
        sweep_values=_decade(1e-3, 1e-2) + _decade(3e-7, 3e-6),
        analysis={
            "traces": Field(
                [{"gamma0": 1e-3, "t0": 3.0e-3}, {"gamma0": 1e-6, "t0": 1.0}, {"gamma0": 3e-5, "t0": 3.3e-2}],
                traces,
            ),
            "gaussian_decade": Field([1e-3, 1e-2], interval),
            "exponential_decade": Field([3e-7, 3e-6], interval),
            "n_times": Field(300, int_at_least(20)),
            "floor": Field(1e-3, positive),
            "step": Field(None, optional_positive),
        },
        description="r_B traces at three couplings plus the decoherence-time sweep",
    ),
    "figA1_zeroT": RecipeSchema(
        model=_qbm_model(gamma0=0.01, temperature=0.0, x0=5.0),
        sweep_parameter=None,
        sweep_values=None,
        analysis={
            "t_max": Field(0.4, positive),
            "n_times": Field(8001, int_at_least(20)),
            "early_t_max": Field(0.006, positive),
            "late_window": Field([0.01, 0.1], interval),
            "step": Field(None, optional_positive),
        },
        description="zero-temperature r_B: early convolution fit and late power-law tail",
    ),
}

RECIPES = tuple(SCHEMAS)


@dataclass(frozen=True)
class ExperimentConfig:
    recipe: str
    model: dict
    sweep: dict
    analysis: dict
    seed: int = 0
    parallelism: int = 1
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "output_dir": self.output_dir,
            "model": copy.deepcopy(self.model),
            "sweep": copy.deepcopy(self.sweep),
            "analysis": copy.deepcopy(self.analysis),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(changes)
        return validate_dict(doc)

    @property
    def sweep_values(self) -> list:
        return list(self.sweep.get("values") or [])


def _fill_section(name, given, fields, errors):
    out = {}
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{name}: must be an object")
        given = {}
    for key in given:
        if key not in fields:
            errors.append(f"{name}.{key}: unknown key")
    for key, spec in fields.items():
        value = copy.deepcopy(given.get(key, spec.default))
        if key in given:
            problem = spec.check(value)
            if problem:
                errors.append(f"{name}.{key}: {problem}")
        out[key] = value
    return out


def _all_model_fields():
    merged = {}
    for schema in SCHEMAS.values():
        merged.update(schema.model)
    return merged


def validate_dict(doc) -> ExperimentConfig:
    """Validate a parsed configuration; every problem is collected into one :class:`ConfigError`."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a JSON object"])
    for key in doc:
        if key not in TOP_LEVEL:
            errors.append(f"{key}: unknown key")
    recipe = doc.get("recipe")
    schema = None
    if recipe is None:
        errors.append("recipe: required")
    elif recipe not in SCHEMAS:
        errors.append(f"recipe: unknown recipe {recipe!r}; expected one of {list(RECIPES)}")
    else:
        schema = SCHEMAS[recipe]

    seed = doc.get("seed", 0)
    if not _int(seed) or not 0 <= seed < 2**64:
        errors.append("seed: must be an integer in [0, 2^64)")
    jobs = doc.get("parallelism", 1)
    if not _int(jobs) or jobs < 1:
        errors.append("parallelism: must be an integer >= 1")
    out_dir = doc.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        errors.append("output_dir: must be a string or null")

    if schema is None:
        # still report field-level problems against every known model field
        model = _fill_section("model", doc.get("model"), _all_model_fields(), errors)
        raise ConfigError(errors)

    model = _fill_section("model", doc.get("model"), schema.model, errors)
    analysis = _fill_section("analysis", doc.get("analysis"), schema.analysis, errors)
    sweep_given = doc.get("sweep")
    sweep = {"parameter": schema.sweep_parameter, "values": copy.deepcopy(schema.sweep_values)}
    if sweep_given is not None:
        if not isinstance(sweep_given, dict):
            errors.append("sweep: must be an object")
        else:
            for key in sweep_given:
                if key not in ("parameter", "values"):
                    errors.append(f"sweep.{key}: unknown key")
            if sweep_given.get("parameter") not in (None, schema.sweep_parameter):
                errors.append(
                    f"sweep.parameter: recipe {recipe} sweeps {schema.sweep_parameter!r}, "
                    f"got {sweep_given['parameter']!r}"
                )
            if sweep_given.get("values") is not None:
                if schema.sweep_parameter is None:
                    errors.append(f"sweep.values: recipe {recipe} takes no sweep")
                else:
                    problem = positive_list(sweep_given["values"])
                    if problem:
                        errors.append(f"sweep.values: {problem}")
                    else:
                        sweep["values"] = list(sweep_given["values"])
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(recipe, model, sweep, analysis, seed, jobs, out_dir)


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    return validate_dict(doc)


def default_config(recipe: str, **overrides) -> ExperimentConfig:
    return validate_dict({"recipe": recipe, **overrides})


OUTPUT_ENV = "DECOHERENCE_OUTPUT_DIR"


def resolve_output_dir(config: ExperimentConfig, override: str | None = None) -> str:
    """``override``, else the config's ``output_dir``, else ``$DECOHERENCE_OUTPUT_DIR/<recipe>``."""
    if override:
        return override
    if config.output_dir:
        return config.output_dir
    base = os.environ.get(OUTPUT_ENV, "runs")
    return os.path.join(base, config.recipe)
