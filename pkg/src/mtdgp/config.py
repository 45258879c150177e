"""Experiment configuration files (JSON), validated against a bundled schema."""

import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .architecture import RECIPES, InitRecipe, KernelInit, ModelSpec
from .data import CsvSchema
from .exceptions import ConfigError, MTDGPError
from .objective import KLWeights, MonteCarloConfig
from .training import TrainConfig


def load_schema():
    return json.loads(resources.files("mtdgp").joinpath("config_schema.json").read_text(encoding="utf-8"))


def _json_path(parts):
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass
class ExperimentConfig:
    spec: ModelSpec
    init: InitRecipe
    weights: KLWeights
    mc: MonteCarloConfig
    train: TrainConfig
    schema: CsvSchema
    standardize: bool = True
    raw: dict = field(default_factory=dict)


def _init_recipe(d):
    d = dict(d or {})
    base = RECIPES[d.pop("recipe", "sarcos")].to_dict()
    for key in ("shared", "task", "head"):
        if key in d:
            base[key] = {**base[key], **d.pop(key)}
    base.update(d)
    kern = {k: KernelInit(**base.pop(k)) for k in ("shared", "task", "head")}
    return InitRecipe(**kern, **base)


def parse_config(doc):
    """Validate a config mapping and build the typed sections.

    Raises :class:`ConfigError` whose ``path`` points at the offending entry
    (e.g. ``$.model.variant``).
    """
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        raise ConfigError(_json_path(first.absolute_path), first.message)
    try:
        spec = ModelSpec.from_dict(doc["model"]).validate()
    except MTDGPError as exc:
        raise ConfigError("$.model", str(exc)) from None
    sections = {}
    for key, build in (
        ("init", _init_recipe),
        ("kl_weights", lambda d: KLWeights.from_dict(d or {}).resolve(spec)),
        ("monte_carlo", lambda d: MonteCarloConfig.from_dict(d or {})),
        ("training", lambda d: TrainConfig.from_dict(d or {})),
    ):
        try:
            sections[key] = build(doc.get(key))
        except (MTDGPError, TypeError, ValueError) as exc:
            raise ConfigError(f"$.{key}", str(exc)) from None
    data = doc["data"]
    schema = CsvSchema(data["features"], data["targets"], data.get("task_id", "task"), spec.tasks)
    if len(schema.features) != spec.input_dim:
        raise ConfigError("$.data.features", f"{len(schema.features)} feature columns but input_dim={spec.input_dim}")
    if len(schema.targets) != spec.output_dim:
        raise ConfigError("$.data.targets", f"{len(schema.targets)} target columns but output_dim={spec.output_dim}")
    return ExperimentConfig(
        spec,
        sections["init"],
        sections["kl_weights"],
        sections["monte_carlo"],
        sections["training"],
        schema,
        bool(data.get("standardize", spec.likelihood == "gaussian")),
        doc,
    )


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)
