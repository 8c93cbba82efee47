"""YAML experiment configuration: schema validation, loading and dumping."""
from importlib import resources
import json
import os
import re

import jsonschema
import yaml

from .experiment import ConfigError, ExperimentConfig

CONFIG_ENV = "PAMBLIND_CONFIG"


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads ``1e-8`` as a string; accept exponent floats without a dot.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def load_schema():
    return json.loads(resources.files("pamblind").joinpath("schema.json").read_text())


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        schema = load_schema()
        cls = jsonschema.validators.validator_for(schema)
        cls.check_schema(schema)
        _VALIDATOR = cls(schema)
    return _VALIDATOR


def _error_path(err):
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            parts.append(str(extra[0]))
    return ".".join(parts)


def validate(data):
    """Raise ConfigError for the first schema violation (deterministic order)."""
    errors = sorted(_validator().iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _error_path(err))


def config_from_dict(data):
    validate(data)
    return ExperimentConfig.from_dict(data)


def parse_config(text):
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    return config_from_dict({} if data is None else data)


def load_config(path=None):
    """Load ``path``; the ``PAMBLIND_CONFIG`` variable overrides it, no path means defaults."""
    path = os.environ.get(CONFIG_ENV) or path
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
