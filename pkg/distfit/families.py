"""Energy transforms and the distribution families fitted to transformed energy."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict

import numpy as np

from errors import ConfigError, ContractViolationError


class Family(str, Enum):
    WEIBULL = "weibull"
    BETA = "beta"
    GAMMA = "gamma"
    EXPONENTIAL = "exponential"
    NORMAL = "normal"
    LOGNORMAL = "lognormal"


CORE_FAMILIES = (Family.WEIBULL, Family.BETA, Family.GAMMA)
EXPERIMENTAL_FAMILIES = (Family.EXPONENTIAL, Family.NORMAL, Family.LOGNORMAL)
POSITIVE_SUPPORT = (Family.WEIBULL, Family.GAMMA, Family.EXPONENTIAL, Family.LOGNORMAL)


@dataclass(frozen=True)
class EnergyTransform:
    """Monotone increasing map g from energy to the fitting scale."""

    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    positive_only: bool = False

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.positive_only and (y <= 0).any():
            raise ContractViolationError(f"{self.name} transform needs positive energies")
        return self.forward(y)


def _cbrt_derivative(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 1.0 / (3.0 * np.cbrt(y) ** 2)


TRANSFORMS: Dict[str, EnergyTransform] = {
    "identity": EnergyTransform("identity", lambda y: y, lambda z: z, np.ones_like),
    "square": EnergyTransform("square", np.square, lambda z: np.sqrt(np.clip(z, 0, None)), lambda y: 2.0 * y, True),
    "cube": EnergyTransform("cube", lambda y: y ** 3, np.cbrt, lambda y: 3.0 * y * y),
    "sqrt": EnergyTransform("sqrt", np.sqrt, np.square, lambda y: 0.5 / np.sqrt(y), True),
    "cbrt": EnergyTransform("cbrt", np.cbrt, lambda z: z ** 3, _cbrt_derivative),
    "log": EnergyTransform("log", np.log, np.exp, lambda y: 1.0 / y, True),
}


def get_transform(name: str) -> EnergyTransform:
    try:
        return TRANSFORMS[name]
    except KeyError as exc:
        raise ConfigError(f"Unknown energy transform {name!r}; expected one of {sorted(TRANSFORMS)}") from exc


def get_family(name: str, experimental: bool = False) -> Family:
    try:
        family = Family(name)
    except ValueError as exc:
        raise ConfigError(f"Unknown distribution family {name!r}") from exc
    if family in EXPERIMENTAL_FAMILIES and not experimental:
        raise ConfigError(f"Family {name} is experimental; pass experimental=True")
    return family
