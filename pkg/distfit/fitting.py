"""Parameter estimation for transformed-energy distributions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.optimize
import scipy.stats
from scipy.special import gammaln

from distfit.families import (
    POSITIVE_SUPPORT,
    EnergyTransform,
    Family,
    get_family,
    get_transform,
)
from errors import ContractViolationError, ConvergenceError, DegenerateDataError

MIN_SAMPLES = 10
EPS = 1e-12
NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-10

DEFAULT_METHOD = {
    Family.WEIBULL: "mle",
    Family.BETA: "moments",
    Family.GAMMA: "moments",
    Family.EXPONENTIAL: "moments",
    Family.NORMAL: "moments",
    Family.LOGNORMAL: "mle",
}


@dataclass
class DistributionFit:
    """A family fitted to ``transform(energy)``.

    For the beta family the transformed data are rescaled onto [0, 1] with
    ``bounds`` (transformed-space min and max); ``energy_bounds`` are the same
    limits mapped back to kWh.
    """

    family: str
    transform: str
    params: Dict[str, float]
    method: str
    n: int
    bounds: Optional[Tuple[float, float]] = None
    ks: Optional[Tuple[float, float]] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def energy_bounds(self) -> Optional[Tuple[float, float]]:
        if self.bounds is None:
            return None
        inv = get_transform(self.transform).inverse
        return float(inv(np.array(self.bounds[0]))), float(inv(np.array(self.bounds[1])))

    def base(self) -> Any:
        """Frozen scipy distribution on the transformed scale."""
        p = self.params
        fam = Family(self.family)
        if fam == Family.BETA:
            lo, hi = self.bounds
            return scipy.stats.beta(p["alpha"], p["beta"], loc=lo, scale=hi - lo)
        if fam == Family.GAMMA:
            return scipy.stats.gamma(p["shape"], scale=p["scale"])
        if fam == Family.WEIBULL:
            return scipy.stats.weibull_min(p["shape"], scale=p["scale"])
        if fam == Family.EXPONENTIAL:
            return scipy.stats.expon(scale=p["scale"])
        if fam == Family.NORMAL:
            return scipy.stats.norm(loc=p["mean"], scale=p["sd"])
        return scipy.stats.lognorm(p["sigma"], scale=np.exp(p["mu"]))

    def _z(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t = get_transform(self.transform)
        y = np.asarray(y, dtype=float)
        valid = y > 0 if t.positive_only else np.ones(y.shape, dtype=bool)
        z = np.full(y.shape, -np.inf)
        z[valid] = t.forward(y[valid])
        return z, valid

    def cdf(self, y: np.ndarray) -> np.ndarray:
        z, valid = self._z(y)
        out = np.zeros(z.shape)
        out[valid] = self.base().cdf(z[valid])
        return out

    def pdf(self, y: np.ndarray) -> np.ndarray:
        """Energy-scale density: base density at g(y) times g'(y)."""
        t = get_transform(self.transform)
        y = np.asarray(y, dtype=float)
        z, valid = self._z(y)
        out = np.zeros(z.shape)
        if Family(self.family) == Family.BETA:
            lo, hi = self.bounds
            inside = valid & (z >= lo) & (z <= hi)
            u = np.clip((z[inside] - lo) / (hi - lo), EPS, 1.0 - EPS)
            dens = scipy.stats.beta.pdf(u, self.params["alpha"], self.params["beta"]) / (hi - lo)
            out[inside] = dens * t.derivative(y[inside])
            return np.nan_to_num(out, nan=0.0, posinf=0.0)
        out[valid] = self.base().pdf(z[valid]) * t.derivative(y[valid])
        return np.nan_to_num(out, nan=0.0, posinf=0.0)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return get_transform(self.transform).inverse(self.base().ppf(np.asarray(u, dtype=float)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "transform": self.transform,
            "method": self.method,
            "n": self.n,
            "params": self.params,
            "bounds_transformed": list(self.bounds) if self.bounds else None,
            "bounds_energy": list(self.energy_bounds) if self.bounds else None,
            "ks_statistic": self.ks[0] if self.ks else None,
            "ks_p_value": self.ks[1] if self.ks else None,
        }


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def weibull_shape_mle(x: np.ndarray, max_iter: int = NEWTON_MAX_ITER, tol: float = NEWTON_TOL) -> float:
    """Weibull shape from the profile likelihood equation by safeguarded Newton.

    Solves ``sum(x^k log x)/sum(x^k) - 1/k - mean(log x) = 0``; steps leaving
    the sign-change bracket are replaced by bisection.
    """
    u = x / x.max()
    lu = np.log(u)
    mean_lu = lu.mean()

    def score(k: float) -> Tuple[float, float]:
        w = u ** k
        s0, s1, s2 = w.sum(), (w * lu).sum(), (w * lu * lu).sum()
        f = s1 / s0 - 1.0 / k - mean_lu
        df = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k)
        return f, df

    lo, hi = 1e-3, 1.0
    while score(hi)[0] < 0:
        lo, hi = hi, hi * 2.0
        if hi > 1e6:
            raise ConvergenceError("Weibull shape bracket search failed", diagnostics={"hi": hi})
    sd = np.std(np.log(x))
    k = min(max(1.2 / sd if sd > 0 else 1.0, lo), hi)
    trace: List[Tuple[float, float]] = []
    for _ in range(max_iter):
        f, df = score(k)
        trace.append((k, f))
        if f < 0:
            lo = k
        else:
            hi = k
        step = f / df if df > 0 else np.inf
        new = k - step
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - k) <= tol * max(1.0, k):
            return float(new)
        k = new
    raise ConvergenceError(
        f"Weibull shape MLE did not converge in {max_iter} iterations",
        last_iterate=k,
        diagnostics={"iterations": max_iter, "last_score": trace[-1][1], "trace_tail": str(trace[-5:])},
    )


def _weibull_shape_moments(z: np.ndarray) -> float:
    cv2 = z.var() / z.mean() ** 2

    def gap(k: float) -> float:
        return np.exp(gammaln(1 + 2 / k) - 2 * gammaln(1 + 1 / k)) - 1.0 - cv2

    return float(scipy.optimize.brentq(gap, 0.02, 500.0, xtol=1e-12))


def _estimate(family: Family, z: np.ndarray, method: str) -> Tuple[Dict[str, float], Optional[Tuple[float, float]]]:
    m, v = float(z.mean()), float(z.var())
    if family == Family.BETA:
        lo, hi = float(z.min()), float(z.max())
        u = (z - lo) / (hi - lo)
        if method == "moments":
            mu, var = float(u.mean()), float(u.var())
            common = mu * (1 - mu) / var - 1.0
            if common <= 0:
                raise DegenerateDataError("beta moments are infeasible for this sample")
            return {"alpha": mu * common, "beta": (1 - mu) * common}, (lo, hi)
        a, b, _, _ = scipy.stats.beta.fit(np.clip(u, EPS, 1 - EPS), floc=0, fscale=1)
        return {"alpha": float(a), "beta": float(b)}, (lo, hi)
    if family == Family.GAMMA:
        if method == "moments":
            return {"shape": m * m / v, "scale": v / m}, None
        a, _, scale = scipy.stats.gamma.fit(z, floc=0)
        return {"shape": float(a), "scale": float(scale)}, None
    if family == Family.WEIBULL:
        k = weibull_shape_mle(z) if method == "mle" else _weibull_shape_moments(z)
        if method == "mle":
            scale = float(z.max() * np.mean((z / z.max()) ** k) ** (1.0 / k))
        else:
            scale = float(m / np.exp(gammaln(1 + 1 / k)))
        return {"shape": k, "scale": scale}, None
    if family == Family.EXPONENTIAL:
        return {"scale": m}, None
    if family == Family.NORMAL:
        return {"mean": m, "sd": float(np.sqrt(v))}, None
    lz = np.log(z)
    if method == "mle":
        return {"mu": float(lz.mean()), "sigma": float(lz.std())}, None
    sigma2 = float(np.log1p(v / (m * m)))
    return {"mu": float(np.log(m) - sigma2 / 2), "sigma": float(np.sqrt(sigma2))}, None


def fit_distribution(
    y: np.ndarray,
    family: str,
    transform: str = "identity",
    method: Optional[str] = None,
    experimental: bool = False,
    with_ks: bool = True,
) -> DistributionFit:
    """Fit ``family`` to ``transform(y)``; moments for beta and gamma, MLE for Weibull unless overridden."""
    fam = get_family(family, experimental)
    t: EnergyTransform = get_transform(transform)
    method = method or DEFAULT_METHOD[fam]
    if method not in ("moments", "mle"):
        raise ContractViolationError(f"Unknown fitting method {method!r}")
    y = np.asarray(y, dtype=float)
    if len(y) < MIN_SAMPLES:
        raise ContractViolationError(f"need at least {MIN_SAMPLES} observations, got {len(y)}")
    if not np.isfinite(y).all():
        raise ContractViolationError("energies must be finite")
    z = t.apply(y)
    if z.var() == 0:
        raise DegenerateDataError("transformed sample has zero variance")
    if fam in POSITIVE_SUPPORT and (z <= 0).any():
        raise ContractViolationError(f"{fam.value} needs positive values after the {t.name} transform")
    params, bounds = _estimate(fam, z, method)
    if not all(np.isfinite(v) for v in params.values()):
        raise DegenerateDataError(f"non-finite parameters {params}")
    fit = DistributionFit(fam.value, t.name, {k: float(v) for k, v in params.items()}, method, len(y), bounds)
    if with_ks:
        from distfit.goodness import ks_test

        fit.ks = ks_test(y, fit)
    logging.debug("Fitted %s on %s scale: %s", fam.value, t.name, fit.params)
    return fit
