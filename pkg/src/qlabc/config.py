"""Run configuration: one JSON file per run, strict keys, full defaults.

Every field has a documented default (see DEFAULTS); unknown keys are a
hard error so typos cannot silently fall back. The resolved
configuration is echoed into each run's output directory and re-parses
to an equal RunConfig, which keeps benchmark bundles reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import get_model, load_genotypes, load_pedigree
from .surrogate import PilotDesign, default_points_per_dim

__all__ = ["DEFAULTS", "RunConfig", "load_config"]

# Defaults for every configurable field. `null` means "derive from the
# model": pilot.box falls back to the model's parameter box,
# pilot.points_per_dim to the dimension-based default, model.sample_size
# to the model's own default.
DEFAULTS: dict = {
    "model": {
        "name": None,  # required: coalescent | gamma | gk | pedigree
        "sample_size": None,
        "param_box": None,
        "pedigree_file": None,  # pedigree model only
        "genotype_file": None,  # pedigree model only
        "snp": None,  # column of genotype_file to analyse
    },
    "pilot": {
        "points_per_dim": None,
        "box": None,
        "seed": 20240601,
    },
    "fit": {
        "variance_mode": "smooth",  # constant | smooth
    },
    "epsilon": {
        "rule": "quantile",  # fixed | quantile | acceptance-rate
        "quantile": 0.1,
        "value": None,  # required when rule = fixed
        "target_rate": 0.3,  # centre of the band for acceptance-rate
        "calibration_draws": 1000,
    },
    "chain": {
        "iterations": 100000,
        "seed": 1,
        "init": "from-observation",  # or an explicit [theta_1, ...]
        "thinning": 1,
    },
    "observed": {
        "s_obs": None,  # list of floats; pedigree derives it from data
    },
    "output_dir": "qlabc-run",
}

_MODEL_SAMPLE_SIZE = {"coalescent": 100, "gamma": 10, "gk": 1000}


def _merge_strict(defaults, given, path: str = ""):
    if not isinstance(given, dict):
        raise ConfigError(f"section {path or '<root>'} must be a JSON object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} in section {path or '<root>'}")
    merged = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            merged[key] = _merge_strict(default, given.get(key, {}), f"{path}{key}.")
        else:
            merged[key] = given.get(key, default)
    return merged


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults resolved."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    @property
    def model_name(self) -> str:
        return self.data["model"]["name"]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    def override(self, **updates) -> "RunConfig":
        """Replace the whitelisted command-line override fields."""
        data = json.loads(json.dumps(self.data))
        for key, value in updates.items():
            if value is None:
                continue
            if key == "seed":
                data["chain"]["seed"] = int(value)
            elif key == "iterations":
                data["chain"]["iterations"] = int(value)
            elif key == "epsilon":
                data["epsilon"]["rule"] = "fixed"
                data["epsilon"]["value"] = float(value)
            elif key == "output_dir":
                data["output_dir"] = str(value)
            else:
                raise ConfigError(f"field {key!r} cannot be overridden on the command line")
        return RunConfig(data)

    def dump(self, path) -> None:
        tmp = Path(path).with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        tmp.replace(path)

    # -- derived objects ---------------------------------------------------

    def build_model(self):
        name = self.model_name
        section = self.data["model"]
        if name == "pedigree":
            if not section["pedigree_file"]:
                raise ConfigError("pedigree model needs model.pedigree_file")
            ped = load_pedigree(section["pedigree_file"])
            kwargs = {"pedigree": ped}
            if section["param_box"] is not None:
                kwargs["box"] = np.asarray(section["param_box"], dtype=np.float64)
            return get_model(name, **kwargs)
        kwargs = {}
        if section["sample_size"] is not None:
            kwargs["sample_size"] = int(section["sample_size"])
        elif name in _MODEL_SAMPLE_SIZE:
            kwargs["sample_size"] = _MODEL_SAMPLE_SIZE[name]
        if section["param_box"] is not None:
            kwargs["box"] = np.asarray(section["param_box"], dtype=np.float64)
        try:
            return get_model(name, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def pilot_design(self, model) -> PilotDesign:
        section = self.data["pilot"]
        box = section["box"]
        box = model.spec.param_box if box is None else np.asarray(box, dtype=np.float64)
        m = section["points_per_dim"]
        m = default_points_per_dim(model.spec.param_dim) if m is None else int(m)
        return PilotDesign(param_box=box, points_per_dim=m)

    def observed_statistic(self, model) -> tuple[np.ndarray, np.ndarray | None]:
        """(s_obs, observed genotypes or None), from config or data files."""
        s_obs = self.data["observed"]["s_obs"]
        if self.model_name == "pedigree":
            section = self.data["model"]
            if not section["genotype_file"] or not section["snp"]:
                raise ConfigError("pedigree model needs model.genotype_file and model.snp")
            genotypes = load_genotypes(section["genotype_file"], model.pedigree)
            if section["snp"] not in genotypes:
                raise ConfigError(
                    f"snp {section['snp']!r} not in genotype file (has {sorted(genotypes)})"
                )
            g_obs = genotypes[section["snp"]]
            from .models import pedigree_statistics

            return pedigree_statistics(model.pedigree.phenotypes, g_obs), g_obs
        if s_obs is None:
            raise ConfigError("observed.s_obs is required for this model")
        return np.asarray(s_obs, dtype=np.float64), None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    merged = _merge_strict(DEFAULTS, raw)
    if not merged["model"]["name"]:
        raise ConfigError("model.name is required")
    return RunConfig(merged)
