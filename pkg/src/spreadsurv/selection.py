"""Best-subset covariate selection by branch and bound.

The search works on least squares of (uncensored) log durations. Nodes of the
deletion tree carry the inverse Gram matrix of their columns; dropping a
column is a rank-one downdate, so every child's residual sum of squares costs
O(1) and its inverse O(k^2). A node's R^2 bounds every subset below it, which
is what prunes the tree.

Winners are scored with :func:`subset_r2`, the same routine the exhaustive
search uses, so both searches report bit-identical values. Ties go to the
lexicographically smallest sorted index tuple.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .aft import FitResult, SurvivalData, fit_mle

logger = logging.getLogger(__name__)

DEFAULT_MAX_P = 30
EXHAUSTIVE_MAX_P = 15
# slack on R^2 for decisions made with downdated (not refitted) values
_MARGIN = 1e-8


class TooManyCovariates(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class SizeBest:
    size: int
    columns: tuple[int, ...]
    r2: float


@dataclass
class SubsetSearch:
    p: int
    best: list[SizeBest]
    evaluated: int
    rank_deficient: bool = False
    # models scored at each size, sizes 1..p; filled by the exhaustive search
    evaluated_per_size: list[int] = field(default_factory=list)

    def masks(self) -> list[tuple[bool, ...]]:
        return [tuple(j in b.columns for j in range(self.p)) for b in self.best]


def _prepare(X, y) -> tuple[np.ndarray, np.ndarray, float]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x p with one response per row")
    if X.shape[0] <= X.shape[1] + 1:
        raise InsufficientData(f"need n > p + 1 rows, got n={X.shape[0]}, p={X.shape[1]}")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    return Xc, yc, float(yc @ yc)


def subset_r2(Xc: np.ndarray, yc: np.ndarray, tss: float, columns: Sequence[int]) -> float:
    """Least-squares R^2 of centred ``yc`` on the given centred columns."""
    if not columns or tss <= 0:
        return 0.0
    A = Xc[:, list(columns)]
    coef, *_ = np.linalg.lstsq(A, yc, rcond=None)
    resid = yc - A @ coef
    return 1.0 - float(resid @ resid) / tss


def exhaustive_subsets(X, y, max_p: int = EXHAUSTIVE_MAX_P) -> SubsetSearch:
    """Score all 2^p - 1 subsets; the reference for the branch-and-bound search."""
    Xc, yc, tss = _prepare(X, y)
    p = Xc.shape[1]
    if p > max_p:
        raise TooManyCovariates(f"exhaustive search limited to p <= {max_p}, got {p}")
    best = []
    counts = []
    for size in range(1, p + 1):
        top: Optional[SizeBest] = None
        counts.append(0)
        for cols in itertools.combinations(range(p), size):
            counts[-1] += 1
            r2 = subset_r2(Xc, yc, tss, cols)
            if top is None or r2 > top.r2:
                top = SizeBest(size, cols, r2)
        best.append(top)
    return SubsetSearch(p, best, sum(counts), evaluated_per_size=counts)


class _Search:
    def __init__(self, Xc: np.ndarray, yc: np.ndarray, tss: float):
        self.Xc, self.yc, self.tss = Xc, yc, tss
        self.G = Xc.T @ Xc
        self.c = Xc.T @ yc
        p = Xc.shape[1]
        self.inc_r2 = [-math.inf] * (p + 1)
        self.inc_cols: list[Optional[tuple[int, ...]]] = [None] * (p + 1)
        self.evaluated = 0
        self.refits = 0
        self.rank_deficient = False

    def _solve(self, cols: list[int]) -> tuple[np.ndarray, np.ndarray, float]:
        G = self.G[np.ix_(cols, cols)]
        Ainv = np.linalg.pinv(G, hermitian=True)
        b = Ainv @ self.c[cols]
        rss = self.tss - float(self.c[cols] @ b)
        return Ainv, b, rss

    def _offer(self, cols: list[int], fast_r2: float) -> None:
        size = len(cols)
        if fast_r2 < self.inc_r2[size] - _MARGIN:
            return
        key = tuple(sorted(cols))
        self.refits += 1
        r2 = subset_r2(self.Xc, self.yc, self.tss, key)
        inc = self.inc_r2[size]
        if r2 > inc or (r2 == inc and key < self.inc_cols[size]):
            self.inc_r2[size] = r2
            self.inc_cols[size] = key

    def _dominated(self, bound: float, lo: int, hi: int) -> bool:
        inc = self.inc_r2
        return all(bound < inc[s] - _MARGIN for s in range(max(lo, 1), hi + 1))

    def visit(self, cols: list[int], free: list[int], Ainv: np.ndarray, b: np.ndarray, rss: float) -> None:
        if not free:
            return
        tss = self.tss
        pos = {col: i for i, col in enumerate(cols)}
        diag = np.diag(Ainv)
        # cost of dropping each free column; least useful first so the
        # biggest subtree keeps the strongest columns
        drops = []
        for col in free:
            q = pos[col]
            d = diag[q]
            delta = b[q] * b[q] / d if d > 1e-12 else math.inf
            drops.append((delta, col))
        drops.sort()
        order = [col for _, col in drops]

        for i, (delta, col) in enumerate(drops):
            child_cols = [x for x in cols if x != col]
            child_free = order[i + 1:]
            size = len(child_cols)
            if size == 0:
                continue
            self.evaluated += 1
            q = pos[col]
            if math.isfinite(delta):
                child_rss = rss + delta
            else:
                child_rss = None
            if child_rss is None or self.rank_deficient:
                cAinv, cb, child_rss = self._solve(child_cols)
                fresh = True
            else:
                fresh = False
            r2 = 1.0 - child_rss / tss if tss > 0 else 0.0
            self._offer(child_cols, r2)
            if not child_free or self._dominated(r2, size - len(child_free), size):
                continue
            if not fresh:
                keep = [j for j in range(len(cols)) if j != q]
                a_q = Ainv[keep, q]
                cAinv = Ainv[np.ix_(keep, keep)] - np.outer(a_q, a_q) / Ainv[q, q]
                cb = b[keep] - a_q * (b[q] / Ainv[q, q])
            self.visit(child_cols, child_free, cAinv, cb, child_rss)


def best_subset_per_size(
    X, y, max_p: int = DEFAULT_MAX_P, allow_large: bool = False,
) -> SubsetSearch:
    """Per-size best least-squares subsets, exact, via branch and bound."""
    Xc, yc, tss = _prepare(X, y)
    p = Xc.shape[1]
    if p > max_p and not allow_large:
        raise TooManyCovariates(f"p={p} exceeds the limit of {max_p}; pass allow_large to override")
    search = _Search(Xc, yc, tss)
    cols = list(range(p))
    if np.linalg.matrix_rank(search.G) < p:
        search.rank_deficient = True
        logger.warning("design is rank deficient; falling back to direct solves")
    Ainv, b, rss = search._solve(cols)
    search.evaluated += 1
    search._offer(cols, 1.0 - rss / tss if tss > 0 else 0.0)
    search.visit(cols, cols, Ainv, b, rss)
    best = [SizeBest(s, search.inc_cols[s], search.inc_r2[s]) for s in range(1, p + 1)]
    return SubsetSearch(p, best, search.evaluated, search.rank_deficient)


# -- refit and report -----------------------------------------------------------


@dataclass
class SubsetResult:
    size: int
    columns: tuple[int, ...]
    mask: tuple[bool, ...]
    ls_r2: float
    fit: FitResult

    @property
    def adj_r2(self) -> Optional[float]:
        return self.fit.adj_r2

    @property
    def significant(self) -> list[bool]:
        return list(self.fit.significant) if self.fit.significant is not None else [False] * self.size


@dataclass
class SelectionReport:
    names: list[str]
    per_size: list[SubsetResult]
    overall_best: Optional[int]
    always_present: list[str] = field(default_factory=list)

    @property
    def best(self) -> Optional[SubsetResult]:
        if self.overall_best is None:
            return None
        return self.per_size[self.overall_best - 1]

    def to_dict(self) -> dict:
        rows = []
        for r in self.per_size:
            rows.append({
                "size": r.size,
                "mask": [self.names[j] for j in r.columns],
                "ls_r2": r.ls_r2,
                "adj_r2": r.adj_r2,
                "beta": [float(v) for v in r.fit.beta],
                "se": None if r.fit.std_errors is None else [float(v) for v in r.fit.std_errors],
                "significant": r.significant,
                "converged": bool(r.fit.converged),
            })
        return {
            "covariates": list(self.names),
            "per_size": rows,
            "overall_best": self.overall_best,
            "always_present": list(self.always_present),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def presence_rows(self) -> list[list[str]]:
        """Size x covariate grid of absent / present / significant."""
        out = []
        for r in self.per_size:
            cells = ["absent"] * len(self.names)
            for j, sig in zip(r.columns, r.significant):
                cells[j] = "significant" if sig else "present"
            out.append([str(r.size)] + cells)
        return out

    def write_presence_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size"] + list(self.names))
            w.writerows(self.presence_rows())


def finalize_selection(
    search: SubsetSearch, data: SurvivalData, names: Sequence[str] = (), alpha: float = 0.05,
) -> SelectionReport:
    """Refit every per-size winner with the censored likelihood and pick the overall best.

    The overall best maximises adjusted R^2 among converged fits, smaller size
    on ties. ``data`` holds the full covariate design with intercept.
    """
    names = list(names) or list(data.names[1:])
    per_size = []
    for b in search.best:
        fit = fit_mle(data.subset(b.columns), alpha=alpha)
        mask = tuple(j in b.columns for j in range(search.p))
        per_size.append(SubsetResult(b.size, b.columns, mask, b.r2, fit))

    overall = None
    best_adj = -math.inf
    for r in per_size:
        if not r.fit.converged or r.adj_r2 is None:
            continue
        if r.adj_r2 > best_adj:
            best_adj, overall = r.adj_r2, r.size
    common = set(range(search.p))
    for r in per_size:
        common &= set(r.columns)
    return SelectionReport(names, per_size, overall, [names[j] for j in sorted(common)])
