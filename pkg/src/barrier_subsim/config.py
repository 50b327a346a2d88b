"""Experiment configuration files.

A config is a JSON object::

    {
      "model":    {"s0": 100, "mu": 0.1, "sigma": 0.2, "n_steps": 250, "maturity": 1},
      "contract": {"lower": 90, "upper": 110, "strike": 100, "rate": 0.1},
      "methods":  [{"name": "subsim", "m": 50000, "beta": 0.1},
                   {"name": "mcs", "m": "match"}],
      "runs": 100,
      "seed": 12345,
      "sweep": [{"parameter": "model.sigma", "logspace": [0.2, 0.4, 10]}]
    }

``contract.maturity`` defaults to ``model.maturity``. An MCS ``m`` of
``"match"`` budgets plain Monte Carlo to the mean total samples of the
SubSim method at the same grid point. Each sweep entry varies one dotted
``parameter`` (or several zipped ``parameters``) over ``values`` or a
``logspace: [start, stop, count]``; entries combine as a cartesian product.
An optional ``complexity`` block (``{"target_cv": 0.1}``) asks ``sweep`` to
also fit the scaling exponents.
"""

from __future__ import annotations

import copy
import itertools
import json
import re
from dataclasses import dataclass

import numpy as np

from .contract import BarrierContract
from .mma import MmaProposal
from .model import GbmParams
from .stats import METHODS, make_config

TOP_LEVEL = {"model", "contract", "methods", "runs", "seed", "workers", "sweep", "reference", "complexity"}
MODEL_KEYS = {"s0", "mu", "sigma", "n_steps", "maturity"}
CONTRACT_KEYS = {"lower", "upper", "strike", "rate", "maturity"}
METHOD_KEYS = {
    "mcs": {"m"},
    "subsim": {"m", "beta", "max_levels", "spread"},
    "mlmc": {"n0", "refine", "n_levels", "target_cv", "samples_per_level", "budget",
             "coarse_half_step", "diffusion_scale", "monitoring", "objective"},
}


class ConfigError(ValueError):
    """Invalid experiment config; ``line`` points into the source text when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        if path:
            where += f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _locate(text: str | None, path: str) -> int | None:
    """Best-effort line number of the key at dotted ``path`` in JSON ``text``."""
    if not text:
        return None
    pos = 0
    found = False
    for key in path.split("."):
        if re.fullmatch(r"\d+", key):
            continue
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            break
        pos, found = hit, True
    return text.count("\n", 0, pos) + 1 if found else None


@dataclass(frozen=True)
class MethodSpec:
    label: str
    name: str
    options: dict

    def build(self, matched_m: int | None = None):
        opts = dict(self.options)
        if self.name == "mcs" and opts.get("m") == "match":
            if matched_m is None:
                raise ConfigError("mcs m='match' needs a subsim method in the same config")
            opts["m"] = matched_m
        if self.name == "subsim" and "spread" in opts:
            opts["proposal"] = MmaProposal(opts.pop("spread"))
        return make_config(self.name, opts)

    @property
    def matches_subsim(self) -> bool:
        return self.name == "mcs" and self.options.get("m") == "match"


@dataclass(frozen=True)
class GridPoint:
    params: GbmParams
    contract: BarrierContract
    raw: dict

    @property
    def key(self) -> dict:
        c = self.raw["contract"]
        return {"sigma": self.params.sigma, "lower": c["lower"], "upper": c["upper"]}


@dataclass
class Experiment:
    raw: dict
    methods: list[MethodSpec]
    points: list[GridPoint]
    runs: int
    seed: int
    workers: int
    reference: float | None
    swept: bool

    def resolved(self) -> dict:
        """The resolved config, as embedded in output records.

        ``workers`` is left out: it never changes results.
        """
        out = copy.deepcopy(self.raw)
        out.pop("workers", None)
        out["runs"], out["seed"] = self.runs, self.seed
        return out


def set_dotted(cfg: dict, path: str, value) -> None:
    node = cfg
    keys = path.split(".")
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node.setdefault(key, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def get_dotted(cfg: dict, path: str):
    node = cfg
    for key in path.split("."):
        node = node[int(key)] if isinstance(node, list) else node[key]
    return node


def parse_override(item: str) -> tuple[str, object]:
    """``key.path=value``; the value is read as JSON, falling back to a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value


def load_text(path: str) -> tuple[dict, str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    return cfg, text


def _check_keys(block, allowed, path, text):
    if not isinstance(block, dict):
        raise ConfigError("must be an object", path, _locate(text, path))
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        sub = f"{path}.{unknown[0]}"
        raise ConfigError(f"unknown key {unknown[0]!r} (allowed: {', '.join(sorted(allowed))})",
                          sub, _locate(text, sub))


def _sweep_axes(sweep, text):
    axes = []
    for i, entry in enumerate(sweep):
        path = f"sweep.{i}"
        if not isinstance(entry, dict):
            raise ConfigError("sweep entries must be objects", path, _locate(text, "sweep"))
        names = entry.get("parameters") or ([entry["parameter"]] if "parameter" in entry else None)
        if not names:
            raise ConfigError("needs 'parameter' or 'parameters'", path, _locate(text, "sweep"))
        if "values" in entry:
            values = entry["values"]
        elif "logspace" in entry:
            lo, hi, count = entry["logspace"]
            values = [float(v) for v in np.geomspace(lo, hi, int(count))]
        else:
            raise ConfigError("needs 'values' or 'logspace'", path, _locate(text, "sweep"))
        if not values:
            raise ConfigError("grid is empty", path, _locate(text, "sweep"))
        if len(names) > 1:
            for v in values:
                if not isinstance(v, list) or len(v) != len(names):
                    raise ConfigError(f"each value must list {len(names)} entries", path,
                                      _locate(text, "values"))
        else:
            values = [[v] for v in values]
        for name in names:
            head = name.split(".")[0]
            leaf = name.split(".")[-1]
            allowed = {"model": MODEL_KEYS, "contract": CONTRACT_KEYS}.get(head)
            if allowed is None or leaf not in allowed or name.count(".") != 1:
                raise ConfigError(f"cannot sweep {name!r}; use model.<field> or contract.<field>",
                                  path, _locate(text, name.split(".")[-1]))
        axes.append((names, values))
    return axes


def build_experiment(cfg: dict, text: str | None = None) -> Experiment:
    """Validate a config dict and expand its sweep into grid points."""
    unknown = sorted(set(cfg) - TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown top-level key {unknown[0]!r}", unknown[0], _locate(text, unknown[0]))
    for block in ("model", "contract", "methods"):
        if block not in cfg:
            raise ConfigError(f"missing required block {block!r}", block)
    _check_keys(cfg["model"], MODEL_KEYS, "model", text)
    _check_keys(cfg["contract"], CONTRACT_KEYS, "contract", text)

    methods_raw = cfg["methods"]
    if not isinstance(methods_raw, list) or not methods_raw:
        raise ConfigError("must be a non-empty list", "methods", _locate(text, "methods"))
    methods = []
    for i, entry in enumerate(methods_raw):
        path = f"methods.{i}"
        if not isinstance(entry, dict) or entry.get("name") not in METHODS:
            raise ConfigError(f"name must be one of {', '.join(METHODS)}", path, _locate(text, "methods"))
        name = entry["name"]
        opts = {k: v for k, v in entry.items() if k not in ("name", "label")}
        _check_keys(opts, METHOD_KEYS[name], path, text)
        label = entry.get("label", name)
        if any(m.label == label for m in methods):
            raise ConfigError(f"duplicate method label {label!r}; add distinct 'label' fields", path,
                              _locate(text, "methods"))
        methods.append(MethodSpec(label, name, opts))
    if any(m.matches_subsim for m in methods) and not any(m.name == "subsim" for m in methods):
        raise ConfigError("mcs m='match' needs a subsim method in the same config", "methods",
                          _locate(text, "match"))

    runs = cfg.get("runs", 100)
    if not isinstance(runs, int) or runs < 2:
        raise ConfigError("runs must be an integer >= 2", "runs", _locate(text, "runs"))
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed", _locate(text, "seed"))
    workers = cfg.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be an integer >= 1", "workers", _locate(text, "workers"))
    reference = cfg.get("reference")

    axes = _sweep_axes(cfg.get("sweep", []), text)
    points = []
    combos = itertools.product(*[[(names, v) for v in values] for names, values in axes]) if axes else [()]
    for combo in combos:
        raw = {"model": dict(cfg["model"]), "contract": dict(cfg["contract"])}
        for names, vals in combo:
            for name, val in zip(names, vals):
                set_dotted(raw, name, val)
        points.append(_point(raw, text))
    # build each method once to surface invariant violations at load time
    for i, spec in enumerate(methods):
        try:
            spec.build(matched_m=1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), f"methods.{i}", _locate(text, "methods")) from exc
    return Experiment(cfg, methods, points, runs, seed, workers, reference, bool(axes))


def _point(raw: dict, text) -> GridPoint:
    model = raw["model"]
    try:
        params = GbmParams(**model)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "model", _locate(text, "model")) from exc
    contract_raw = dict(raw["contract"])
    contract_raw.setdefault("maturity", params.maturity)
    try:
        contract = BarrierContract(**contract_raw)
        contract.check_model(params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "contract", _locate(text, "contract")) from exc
    raw = {"model": dict(model), "contract": contract_raw}
    return GridPoint(params, contract, raw)


def load_experiment(path: str, overrides: list[str] | tuple = ()) -> Experiment:
    cfg, text = load_text(path)
    for item in overrides:
        key, value = parse_override(item)
        try:
            set_dotted(cfg, key, value)
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise ConfigError(f"cannot apply override: {exc}", key) from exc
    return build_experiment(cfg, text)
