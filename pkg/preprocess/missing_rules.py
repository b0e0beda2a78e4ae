"""Rule-based filling of missing layer attributes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from errors import ConfigError
from features.layers import SpatialLayer

RULES_PATH = Path(__file__).with_name("missing_rules.yaml")


@dataclass(frozen=True)
class DerivedImputation:
    layer: str
    target: str
    formula: str


@dataclass(frozen=True)
class ZeroRule:
    name: str
    layer: str
    targets: Tuple[str, ...]
    fill: float = 0.0
    guard: Optional[str] = None


@dataclass(frozen=True)
class RuleSet:
    derived_imputations: Tuple[DerivedImputation, ...] = ()
    zero_rules: Tuple[ZeroRule, ...] = ()

    def __post_init__(self) -> None:
        fills: Dict[Tuple[str, str], float] = {}
        for rule in self.zero_rules:
            for target in rule.targets:
                key = (rule.layer, target)
                if key in fills and fills[key] != rule.fill:
                    raise ConfigError(f"{rule.layer}.{target} gets conflicting fills {fills[key]} and {rule.fill}")
                fills[key] = rule.fill
        seen = set()
        for imp in self.derived_imputations:
            key = (imp.layer, imp.target)
            if key in seen:
                raise ConfigError(f"{imp.layer}.{imp.target} has two derived imputations")
            seen.add(key)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RuleSet":
        try:
            derived = tuple(
                DerivedImputation(d["layer"], d["target"], d["formula"]) for d in data.get("derived_imputations") or []
            )
            zero = tuple(
                ZeroRule(
                    name=z.get("name", f"rule_{i + 1}"),
                    layer=z["layer"],
                    targets=tuple(z["targets"]),
                    fill=float(z.get("fill", 0.0)),
                    guard=z.get("guard"),
                )
                for i, z in enumerate(data.get("zero_rules") or [])
            )
        except KeyError as exc:
            raise ConfigError(f"Missing key {exc} in rule set") from exc
        return cls(derived, zero)


def load_rules(path: Union[str, Path] = RULES_PATH) -> RuleSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return RuleSet.from_dict(yaml.safe_load(fh) or {})
    except FileNotFoundError as exc:
        raise ConfigError(f"Rule file {path} not found") from exc


def _evaluate(df: pd.DataFrame, expr: str, label: str) -> pd.Series:
    try:
        out = df.eval(expr, engine="python")
    except (pd.errors.UndefinedVariableError, NameError, KeyError, SyntaxError) as exc:
        raise ConfigError(f"{label}: cannot evaluate {expr!r}: {exc}") from exc
    if np.isscalar(out):
        out = pd.Series(out, index=df.index)
    return out


@dataclass
class RuleLog:
    """Number of cells filled by each derived imputation or rule."""

    filled: Dict[str, int] = field(default_factory=dict)

    def add(self, key: str, n: int) -> None:
        self.filled[key] = self.filled.get(key, 0) + n


def apply_to_frame(df: pd.DataFrame, layer: str, rules: RuleSet, log: Optional[RuleLog] = None) -> pd.DataFrame:
    """Apply the rules of ``layer`` to an attribute table; returns a new frame."""
    out = df.copy()
    log = log if log is not None else RuleLog()
    for imp in (r for r in rules.derived_imputations if r.layer == layer):
        if imp.target not in out.columns:
            raise ConfigError(f"Derived target {imp.target} absent from layer {layer}")
        value = _evaluate(out, imp.formula, f"{layer}.{imp.target}").astype(float)
        value = value.where(np.isfinite(value))
        mask = out[imp.target].isna() & value.notna()
        if mask.any():
            out[imp.target] = out[imp.target].astype(float)
            out.loc[mask, imp.target] = value[mask]
        log.add(f"{layer}.{imp.target}", int(mask.sum()))
    for rule in (r for r in rules.zero_rules if r.layer == layer):
        if rule.guard is None:
            hit = pd.Series(True, index=out.index)
        else:
            hit = _evaluate(out, rule.guard, rule.name).fillna(False).astype(bool)
        for target in rule.targets:
            if target not in out.columns:
                raise ConfigError(f"{rule.name}: target {target} absent from layer {layer}")
            mask = hit & out[target].isna()
            if mask.any():
                out[target] = out[target].astype(float)
                out.loc[mask, target] = rule.fill
            log.add(rule.name, int(mask.sum()))
    return out


def apply_missing_rules(layers: Mapping[str, SpatialLayer], rules: RuleSet) -> Tuple[Dict[str, SpatialLayer], RuleLog]:
    """Derived imputations then zero rules, per layer. Non-missing cells are never touched."""
    log = RuleLog()
    ruled = {r.layer for r in rules.derived_imputations} | {r.layer for r in rules.zero_rules}
    for name in sorted(ruled - set(layers)):
        logging.info("No layer named %s loaded; its missing-value rules are skipped", name)
    out: Dict[str, SpatialLayer] = {}
    for name, layer in layers.items():
        if name in ruled:
            out[name] = layer.with_attributes(apply_to_frame(layer.attributes, name, rules, log))
        else:
            out[name] = layer
    for key, n in log.filled.items():
        if n:
            logging.info("Missing-value rule %s filled %d cells", key, n)
    return out, log
