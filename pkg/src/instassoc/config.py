"""Run configuration: INI-style files with ``association``, ``scenario`` and ``oracle`` sections.

Example::

    [association]
    tau = 0.5
    window_T = 3
    similarity_scale = 10

    [scenario]
    n_objects = 20
    n_frames = 100
    occlusion_events = [(0, 30, 40)]

    [oracle]
    mode = clip:5

Values are Python literals; anything that fails to parse stays a string.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields
from typing import Any, Optional

from .assoc import AssociationConfig
from .evaluation import OracleMode
from .sim import ScenarioConfig

# accepted spellings for association keys, mapped to field names
ASSOCIATION_ALIASES = {
    "window_t": "window_T",
    "match_thresh": "match_threshold",
    "nms": "nms_threshold",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    association: AssociationConfig = field(default_factory=AssociationConfig)
    scenario: Optional[ScenarioConfig] = None
    oracle: OracleMode = field(default_factory=OracleMode)
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "association": self.association.to_dict(),
            "scenario": self.scenario.to_dict() if self.scenario else None,
            "oracle": str(self.oracle),
            "seed": self.seed,
        }


def _literal(text: str) -> Any:
    if text.strip().lower() in ("none", "null", ""):
        return None
    if text.strip().lower() in ("true", "false"):
        return text.strip().lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def _normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def association_from_mapping(values: dict, base: AssociationConfig | None = None) -> AssociationConfig:
    known = {f.name for f in fields(AssociationConfig)}
    params = (base or AssociationConfig()).to_dict()
    for key, value in values.items():
        name = _normalize_key(key)
        name = ASSOCIATION_ALIASES.get(name.lower(), name)
        if name not in known:
            raise ConfigError(f"unknown association option {key!r}")
        params[name] = value
    try:
        return AssociationConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid association config: {exc}") from exc


def scenario_from_mapping(values: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    params = {}
    for key, value in values.items():
        name = _normalize_key(key)
        if name not in known:
            raise ConfigError(f"unknown scenario option {key!r}")
        params[name] = value
    try:
        return ScenarioConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    unknown = set(parser.sections()) - {"association", "scenario", "oracle", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def section(name):
        return {k: _literal(v) for k, v in parser.items(name)} if parser.has_section(name) else {}

    run = RunConfig(association=association_from_mapping(section("association")))
    scen = section("scenario")
    if scen:
        run.scenario = scenario_from_mapping(scen)
    oracle = section("oracle")
    if "mode" in oracle:
        try:
            run.oracle = OracleMode.parse(str(oracle["mode"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    seed = section("run").get("seed")
    if seed is not None:
        run.seed = int(seed)
    return run
