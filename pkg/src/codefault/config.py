"""Scenario files: a small YAML schema compiled into a MarketModel.

Required keys: ``epsilon``, ``banks`` (list of intensity specs), ``stress``
(one intensity spec).  Optional: ``initial_state``, ``atom_at_zero``,
``state_path {grid, values}``, ``destructive_competition {K_override}`` and
``dynamics`` (a Monte Carlo state-path generator).  Every parse error names
the offending key path and, where available, its line in the file.

Intensity spec forms::

    {kind: constant, rate: r}
    {kind: piecewise, grid: [...], values: [...]}
    {kind: affine, betas: [...]}
    {kind: destructive, K: n, base: {...}}

All rates and times share one (dimensionless) unit; pick it once per
scenario and express ``epsilon`` in the same unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import yaml

from .model import (
    AffineState,
    Constant,
    DestructiveCompetition,
    IntensitySpec,
    MarketModel,
    PiecewiseDeterministic,
    StatePath,
)
from .simulate import ConstantState, FrozenPath, MeanReverting, PathGenerator

__all__ = ["ConfigError", "Scenario", "load_scenario", "parse_scenario"]


class ConfigError(ValueError):
    """Scenario problem, annotated with the key path and source line."""

    def __init__(self, message: str, path: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = path if line is None else f"{path} (line {line})"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Scenario:
    model: MarketModel
    state_path: Optional[StatePath]
    generator: PathGenerator


class _Doc:
    """Parsed YAML with a line number per key path."""

    def __init__(self, data, lines):
        self.data = data
        self.lines = lines

    def line(self, path: str) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return self.lines.get("")


def _walk(loader, node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = loader.construct_object(key_node)
            child = f"{path}.{key}" if path else str(key)
            lines[child] = key_node.start_mark.line + 1
            out[str(key)] = _walk(loader, value_node, child, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_walk(loader, item, f"{path}[{i}]", lines) for i, item in enumerate(node.value)]
    return loader.construct_object(node)


def _load_yaml(text: str) -> _Doc:
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", "<document>",
                          None if mark is None else mark.line + 1) from exc
    finally:
        loader.dispose()
    if node is None:
        raise ConfigError("empty scenario", "<document>")
    lines: dict = {}
    data = _walk(loader, node, "", lines)
    return _Doc(data, lines)


def _require(doc: _Doc, mapping: dict, key: str, path: str):
    if not isinstance(mapping, dict):
        raise ConfigError("expected a mapping", path, doc.line(path))
    if key not in mapping:
        child = f"{path}.{key}" if path else key
        raise ConfigError(f"missing required key `{key}`", child, doc.line(path))
    return mapping[key]


def _number(doc: _Doc, value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {type(value).__name__}", path, doc.line(path))
    return float(value)


def _number_list(doc: _Doc, value, path: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a nonempty list of numbers", path, doc.line(path))
    return [_number(doc, v, f"{path}[{i}]") for i, v in enumerate(value)]


def _intensity(doc: _Doc, value, path: str) -> IntensitySpec:
    if not isinstance(value, dict):
        raise ConfigError("expected an intensity mapping {kind, ...}", path, doc.line(path))
    kind = _require(doc, value, "kind", path)
    try:
        if kind == "constant":
            return Constant(_number(doc, _require(doc, value, "rate", path), f"{path}.rate"))
        if kind == "piecewise":
            return PiecewiseDeterministic(
                _number_list(doc, _require(doc, value, "grid", path), f"{path}.grid"),
                _number_list(doc, _require(doc, value, "values", path), f"{path}.values"),
            )
        if kind == "affine":
            return AffineState(_number_list(doc, _require(doc, value, "betas", path), f"{path}.betas"))
        if kind == "destructive":
            k = _require(doc, value, "K", path)
            if isinstance(k, bool) or not isinstance(k, int):
                raise ConfigError("K must be an integer", f"{path}.K", doc.line(f"{path}.K"))
            return DestructiveCompetition(
                _intensity(doc, _require(doc, value, "base", path), f"{path}.base"), k)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path, doc.line(path)) from exc
    raise ConfigError(f"unknown intensity kind {kind!r} "
                      "(expected constant/piecewise/affine/destructive)",
                      f"{path}.kind", doc.line(f"{path}.kind"))


def _override_K(spec: IntensitySpec, K: int) -> IntensitySpec:
    if isinstance(spec, DestructiveCompetition):
        return DestructiveCompetition(spec.base, K)
    return spec


def parse_scenario(text: str) -> Scenario:
    """Parse scenario YAML text into a model, optional path and generator."""
    doc = _load_yaml(text)
    top = doc.data
    if not isinstance(top, dict):
        raise ConfigError("scenario must be a mapping", "<document>", doc.line(""))

    epsilon = _number(doc, _require(doc, top, "epsilon", ""), "epsilon")
    banks_raw = _require(doc, top, "banks", "")
    if not isinstance(banks_raw, list) or not banks_raw:
        raise ConfigError("expected a nonempty list of intensity specs", "banks", doc.line("banks"))
    banks = [_intensity(doc, b, f"banks[{i}]") for i, b in enumerate(banks_raw)]
    stress = _intensity(doc, _require(doc, top, "stress", ""), "stress")

    initial_state = None
    if "initial_state" in top:
        initial_state = _number_list(doc, top["initial_state"], "initial_state")

    atom = top.get("atom_at_zero", False)
    if not isinstance(atom, bool):
        raise ConfigError("expected a boolean", "atom_at_zero", doc.line("atom_at_zero"))

    state_path = None
    if "state_path" in top:
        sp = top["state_path"]
        grid = _number_list(doc, _require(doc, sp, "grid", "state_path"), "state_path.grid")
        vals = _require(doc, sp, "values", "state_path")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("expected a list of state vectors", "state_path.values",
                              doc.line("state_path.values"))
        rows = []
        for i, row in enumerate(vals):
            if isinstance(row, (int, float)) and not isinstance(row, bool):
                rows.append([float(row)])
            else:
                rows.append(_number_list(doc, row, f"state_path.values[{i}]"))
        try:
            state_path = StatePath(grid, rows, horizon=sp.get("horizon"))
        except ValueError as exc:
            raise ConfigError(str(exc), "state_path", doc.line("state_path")) from exc

    if "destructive_competition" in top:
        dc = top["destructive_competition"]
        k = _require(doc, dc, "K_override", "destructive_competition")
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ConfigError("K_override must be a positive integer",
                              "destructive_competition.K_override",
                              doc.line("destructive_competition.K_override"))
        banks = [_override_K(b, k) for b in banks]
        stress = _override_K(stress, k)

    try:
        model = MarketModel(banks, stress, epsilon,
                            initial_state=initial_state, atom_at_zero=atom)
    except ValueError as exc:
        raise ConfigError(str(exc), "<scenario>", doc.line("")) from exc

    generator = _generator(doc, top, model, state_path, initial_state)
    return Scenario(model, state_path, generator)


def _generator(doc: _Doc, top: dict, model: MarketModel,
               state_path: Optional[StatePath], initial_state) -> PathGenerator:
    if "dynamics" in top:
        dyn = top["dynamics"]
        kind = _require(doc, dyn, "kind", "dynamics")
        if kind != "mean_reverting":
            raise ConfigError(f"unknown dynamics kind {kind!r}", "dynamics.kind",
                              doc.line("dynamics.kind"))
        if initial_state is None:
            raise ConfigError("dynamics need initial_state", "dynamics", doc.line("dynamics"))
        try:
            return MeanReverting(
                initial_state,
                _number_list(doc, _require(doc, dyn, "mean", "dynamics"), "dynamics.mean"),
                _number(doc, _require(doc, dyn, "speed", "dynamics"), "dynamics.speed"),
                _number(doc, _require(doc, dyn, "vol", "dynamics"), "dynamics.vol"),
                _number(doc, _require(doc, dyn, "horizon", "dynamics"), "dynamics.horizon"),
                dt=_number(doc, dyn["dt"], "dynamics.dt") if "dt" in dyn else None,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "dynamics", doc.line("dynamics")) from exc
    if state_path is not None:
        return FrozenPath(state_path)
    x0 = initial_state if initial_state is not None else [1.0]
    return ConstantState(x0)


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())
