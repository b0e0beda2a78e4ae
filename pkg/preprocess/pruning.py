"""Removal of uninformative, correlated and collinear features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolationError, SingularDesignError
from features.matrix import FeatureMatrix
from regression.ols import check_rank

COND_LIMIT = 1e12


@dataclass
class PruneReport:
    dropped_uninformative: List[str] = field(default_factory=list)
    correlation_groups: List[Tuple[str, List[str]]] = field(default_factory=list)
    vif_elimination_order: List[Tuple[str, float]] = field(default_factory=list)
    eigen_diagnostics: Dict[str, float] = field(default_factory=dict)

    def dropped(self) -> List[str]:
        out = list(self.dropped_uninformative)
        for rep, members in self.correlation_groups:
            out.extend(m for m in members if m != rep)
        out.extend(name for name, _ in self.vif_elimination_order)
        return out

    def merge(self, other: "PruneReport") -> "PruneReport":
        merged = PruneReport(
            self.dropped_uninformative + other.dropped_uninformative,
            self.correlation_groups + other.correlation_groups,
            self.vif_elimination_order + other.vif_elimination_order,
            {**self.eigen_diagnostics, **other.eigen_diagnostics},
        )
        dropped = merged.dropped()
        if len(dropped) != len(set(dropped)):
            raise ContractViolationError("a feature was dropped by more than one pruning step")
        return merged

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dropped_uninformative": self.dropped_uninformative,
            "correlation_groups": [{"representative": r, "members": m} for r, m in self.correlation_groups],
            "vif_elimination_order": [
                {"feature": n, "vif": (v if np.isfinite(v) else "inf")} for n, v in self.vif_elimination_order
            ],
            "eigen_diagnostics": self.eigen_diagnostics,
        }


def drop_uninformative(X: FeatureMatrix, zero_frac: float = 0.95) -> Tuple[FeatureMatrix, List[str]]:
    """Drop features with strictly more than ``zero_frac`` zero values."""
    if not 0 < zero_frac < 1:
        raise ContractViolationError(f"zero_frac must be in (0, 1), got {zero_frac}")
    share = (X.values == 0).mean(axis=0)
    dropped = [n for n, s in zip(X.feature_names, share) if s > zero_frac]
    if len(dropped) == X.p:
        raise ContractViolationError("every feature is uninformative")
    for name in dropped:
        logging.info("Dropping uninformative feature %s", name)
    return X.select([n for n in X.feature_names if n not in dropped]), dropped


def _abs_corr(values: np.ndarray) -> np.ndarray:
    z = values - values.mean(axis=0)
    z = z / z.std(axis=0)
    return np.abs(z.T @ z / len(z))


def prune_correlated(
    X: FeatureMatrix,
    threshold: float = 0.95,
    priority: Optional[Sequence[str]] = None,
) -> Tuple[FeatureMatrix, PruneReport]:
    """Keep one representative per group of mutually correlated features.

    Groups are built greedily: visiting features in priority order (the
    configured names first, then column order), each unassigned feature
    opens a group and takes every unassigned feature correlated above
    ``threshold`` with all current members. Grouping repeats on the
    representatives until no pair exceeds the threshold. Constant columns are
    dropped first as uninformative.
    """
    if not 0 < threshold < 1:
        raise ContractViolationError(f"threshold must be in (0, 1), got {threshold}")
    report = PruneReport()
    constant = [n for n, s in zip(X.feature_names, X.values.std(axis=0)) if s == 0]
    if constant:
        logging.info("Dropping %d constant features before correlation analysis", len(constant))
        report.dropped_uninformative.extend(constant)
        X = X.select([n for n in X.feature_names if n not in constant])

    rank = {n: i for i, n in enumerate(priority or [])}
    members: Dict[str, List[str]] = {n: [n] for n in X.feature_names}
    names = list(X.feature_names)
    while True:
        values = X.select(names).values
        corr = _abs_corr(values)
        np.fill_diagonal(corr, 0.0)
        if not (corr > threshold).any():
            break
        order = sorted(range(len(names)), key=lambda i: (rank.get(names[i], len(rank)), i))
        assigned = np.zeros(len(names), dtype=bool)
        survivors = []
        for i in order:
            if assigned[i]:
                continue
            group = [i]
            assigned[i] = True
            for j in np.flatnonzero((corr[i] > threshold) & ~assigned):
                if all(corr[j, g] > threshold for g in group):
                    group.append(int(j))
                    assigned[j] = True
            rep = names[i]
            for g in group[1:]:
                members[rep].extend(members.pop(names[g]))
            survivors.append(i)
        names = [names[i] for i in sorted(survivors)]

    for rep in names:
        if len(members[rep]) > 1:
            report.correlation_groups.append((rep, members[rep]))
            logging.info("Correlation group %s represents %s", rep, members[rep][1:])
    return X.select(names), report


def _vif_direct(values: np.ndarray) -> np.ndarray:
    """VIF of every column by regressing it (with intercept) on the others."""
    n, p = values.shape
    out = np.empty(p)
    for j in range(p):
        others = np.column_stack([np.ones(n), np.delete(values, j, axis=1)])
        try:
            check_rank(others, [str(k) for k in range(others.shape[1])])
        except SingularDesignError:
            out[j] = np.inf
            continue
        target = values[:, j]
        coef, *_ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        tss = float(((target - target.mean()) ** 2).sum())
        r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
        out[j] = np.inf if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out


def variance_inflation(values: np.ndarray) -> np.ndarray:
    """VIF_j = 1 / (1 - R²_j), the diagonal of the inverse correlation matrix.

    Falls back to one auxiliary regression per feature when the correlation
    matrix is numerically singular; perfectly explained features get +inf.
    """
    values = np.asarray(values, dtype=float)
    sd = values.std(axis=0)
    if values.shape[1] == 1:
        return np.ones(1) if sd[0] > 0 else np.array([np.inf])
    if (sd == 0).any():
        out = np.full(values.shape[1], np.inf)
        ok = sd > 0
        if ok.sum() > 0:
            out[ok] = variance_inflation(values[:, ok])
        return out
    z = (values - values.mean(axis=0)) / sd
    corr = z.T @ z / len(z)
    if np.linalg.cond(corr) < COND_LIMIT:
        vif = np.diag(np.linalg.inv(corr))
        return np.maximum(vif, 1.0)
    return _vif_direct(values)


def eigen_diagnostics(values: np.ndarray) -> Dict[str, float]:
    """Eigenvalue checks of the feature correlation matrix."""
    z = values - values.mean(axis=0)
    z = z / z.std(axis=0)
    eig = np.linalg.eigvalsh(z.T @ z / len(z))
    p = values.shape[1]
    lo, hi = float(eig.min()), float(eig.max())
    return {
        "min_eigenvalue": lo,
        "sum_eigenvalues": float(eig.sum()),
        "p": float(p),
        "condition_number": float(np.sqrt(hi / lo)) if lo > 0 else float("inf"),
        "sum_reciprocal_eigenvalues": float((1.0 / eig).sum()) if lo > 0 else float("inf"),
        "reciprocal_limit": 5.0 * p,
    }


def vif_eliminate(X: FeatureMatrix, threshold: float = 10.0) -> Tuple[FeatureMatrix, PruneReport]:
    """Remove the maximum-VIF feature until every VIF is below ``threshold``.

    Ties go to the lowest column index.
    """
    if threshold <= 1:
        raise ContractViolationError(f"VIF threshold must exceed 1, got {threshold}")
    report = PruneReport()
    names = list(X.feature_names)
    while len(names) > 1:
        values = X.select(names).values
        if values.shape[0] <= values.shape[1]:
            raise ContractViolationError(f"VIF needs n > p, got n={values.shape[0]}, p={values.shape[1]}")
        vif = variance_inflation(values)
        j = int(np.argmax(vif))
        if vif[j] < threshold:
            break
        logging.info("Eliminating %s (VIF %.2f)", names[j], vif[j])
        report.vif_elimination_order.append((names[j], float(vif[j])))
        del names[j]
    out = X.select(names)
    report.eigen_diagnostics = eigen_diagnostics(out.values)
    return out, report
