"""
Sparsification for FormulaHunter
LASSO+l1 coordinate descent along a penalty path, then exhaustive l0 best-subset search
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.models.config import SparsifyConfig
from app.models.domain import DataSet, ErrorReport, FeatureMatrix, LassoResult, PathReport, SparseFormula
from app.models.errors import SolverError, SupportTooLargeError
from app.services.feature_service import FeatureCache, feature_service

logger = logging.getLogger(__name__)

ACTIVITY_THRESHOLD = 1e-10
OBJECTIVE_SLACK = 1e-9
CANDIDATE_SLACK = 1e-9
SINGULAR_TOLERANCE = 1e-12
MSE_SLACK = 1e-12
SUBSET_BATCH = 50000


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


@dataclass
class SparsifyOutcome:
    """Everything one sparsification run produces"""

    features: FeatureMatrix
    path: PathReport
    results: List[LassoResult]
    support: List[int]
    formulas: List[SparseFormula]
    target_scale: float = 1.0
    skipped_subsets: List[Tuple[str, ...]] = field(default_factory=list)


class SparsifyService:
    """l1 screening and l0 selection on expanded feature spaces"""

    def lasso_l1(
        self,
        V: np.ndarray,
        y: np.ndarray,
        lambda_hat: float,
        tol: Optional[float] = None,
        max_sweeps: int = 10000,
        gamma0: Optional[np.ndarray] = None,
        intercept: bool = True,
        activity_threshold: float = ACTIVITY_THRESHOLD,
    ) -> LassoResult:
        """
        Cyclic coordinate descent on sum_i (<gamma, v_i> + b - y_i)^2 + lambda_hat * |gamma|_1

        Sweeps alternate between a full pass and passes over the nonzero
        coordinates only; convergence is declared on a full pass whose largest
        coefficient change is at most tol (default 1e-8 * std(y)). The intercept
        b is unpenalized and refreshed after every pass.

        Returns:
            LassoResult; converged is False when max_sweeps ran out
        """
        V = np.asfortranarray(V, dtype=float)
        y = np.asarray(y, dtype=float)
        n, m = V.shape
        if len(y) != n:
            raise ValueError(f"{len(y)} targets for {n} rows")
        if not lambda_hat >= 0.0:
            raise ValueError(f"lambda_hat must be >= 0, got {lambda_hat}")
        if tol is None:
            tol = 1e-8 * float(np.std(y)) if np.std(y) > 0 else 1e-12

        norms = np.einsum("ij,ij->j", V, V)
        gamma = np.zeros(m) if gamma0 is None else np.array(gamma0, dtype=float)
        half_penalty = lambda_hat / 2.0
        columns = [V[:, j] for j in range(m)]

        b = float(np.mean(y - V @ gamma)) if intercept else 0.0
        residual = y - b - V @ gamma
        history = [self._objective(residual, gamma, lambda_hat)]
        sweeps = 0
        converged = False
        full = True

        while sweeps < max_sweeps:
            if full:
                coordinates = range(m)
                residual = y - b - V @ gamma
            else:
                coordinates = np.flatnonzero(gamma).tolist()
            max_change = 0.0
            for j in coordinates:
                if norms[j] == 0.0:
                    continue
                column = columns[j]
                old = gamma[j]
                rho = float(column @ residual) + norms[j] * old
                new = soft_threshold(rho, half_penalty) / norms[j]
                if new != old:
                    residual -= column * (new - old)
                    gamma[j] = new
                    max_change = max(max_change, abs(new - old))
            if intercept:
                shift = float(residual.mean())
                b += shift
                residual -= shift
            sweeps += 1

            objective = self._objective(residual, gamma, lambda_hat)
            if objective > history[-1] + OBJECTIVE_SLACK * abs(history[-1]) + 1e-15 * float(y @ y):
                raise SolverError(
                    f"l1 objective increased from {history[-1]:.17g} to {objective:.17g} "
                    f"at sweep {sweeps} (lambda_hat={lambda_hat:g})"
                )
            history.append(objective)

            if max_change <= tol:
                if full:
                    converged = True
                    break
                full = True
            else:
                full = False

        if not converged:
            logger.warning(f"l1 solve at lambda_hat={lambda_hat:g} stopped after {sweeps} sweeps without converging")
        active = np.flatnonzero(np.abs(gamma) > activity_threshold)
        return LassoResult(
            gamma=gamma,
            intercept=b,
            active=active,
            lambda_hat=lambda_hat,
            iterations=sweeps,
            converged=converged,
            objective=history[-1],
            objective_history=tuple(history),
        )

    def lasso_path(
        self,
        V: np.ndarray,
        y: np.ndarray,
        lambdas: Sequence[float],
        tol: Optional[float] = None,
        max_sweeps: int = 10000,
        warm_start: bool = True,
        target_scale: float = 1.0,
        activity_threshold: float = ACTIVITY_THRESHOLD,
        threads: int = 1,
    ) -> Tuple[PathReport, List[LassoResult]]:
        """
        Solve along increasing penalties; each solution seeds the next when warm-started

        Args:
            target_scale: factor that maps the design-scale target back to kJ/mol
                for the reported errors

        Returns:
            (PathReport, one LassoResult per penalty)
        """
        lambdas = [float(v) for v in lambdas]
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError("path penalties must be strictly increasing")
        V = np.asfortranarray(V, dtype=float)
        y = np.asarray(y, dtype=float)

        def solve(lam: float, start: Optional[np.ndarray]) -> LassoResult:
            return self.lasso_l1(V, y, lam, tol, max_sweeps, start, activity_threshold=activity_threshold)

        results: List[LassoResult] = []
        if warm_start:
            start = None
            for lam in lambdas:
                result = solve(lam, start)
                results.append(result)
                start = result.gamma
                logger.info(f"lambda_hat={lam:g}: {len(result.active)} active after {result.iterations} sweeps")
        elif threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda lam: solve(lam, None), lambdas))
        else:
            results = [solve(lam, None) for lam in lambdas]

        errors = []
        for result in results:
            delta = np.abs(y - result.intercept - V @ result.gamma) * target_scale
            errors.append(ErrorReport(float(delta.mean()), float(np.mean(delta ** 2)), float(delta.max())))
        report = PathReport(
            lambdas=tuple(lambdas),
            active_sizes=tuple(len(r.active) for r in results),
            errors=tuple(errors),
            active_sets=tuple(tuple(int(i) for i in r.active) for r in results),
            converged=tuple(r.converged for r in results),
            iterations=tuple(r.iterations for r in results),
        )
        unconverged = [r.lambda_hat for r in results if not r.converged]
        if unconverged:
            logger.warning(f"{len(unconverged)} of {len(results)} path points hit max_sweeps={max_sweeps}: {unconverged}")
        return report, results

    def select_support(self, path: PathReport, cap: int = 30) -> List[int]:
        """
        Active set at the smallest converged penalty whose active-set size is at most cap

        Points whose solve ran out of sweeps are skipped. When no converged
        point is small enough the last converged point is used.

        Raises:
            SolverError: no path point converged
        """
        if cap < 1:
            raise ValueError(f"cap must be >= 1, got {cap}")
        if len(path) == 0:
            raise ValueError("cannot select a support from an empty path")
        converged = [i for i, ok in enumerate(path.converged) if ok]
        if not converged:
            raise SolverError(
                f"none of the {len(path)} path points converged; raise sparsify.max_sweeps "
                f"(solves stopped at {max(path.iterations)} sweeps)"
            )
        skipped = len(path) - len(converged)
        if skipped:
            logger.info(f"Skipping {skipped} unconverged path points for support selection")
        for i in converged:
            if path.active_sizes[i] <= cap:
                logger.info(f"Support of {path.active_sizes[i]} features selected at lambda_hat={path.lambdas[i]:g}")
                return sorted(path.active_sets[i])
        last = converged[-1]
        logger.warning(f"No converged path point reaches {cap} features; using the last ({path.active_sizes[last]})")
        return sorted(path.active_sets[last])

    def l0_search(
        self,
        X: np.ndarray,
        y: np.ndarray,
        k_max: int = 5,
        labels: Optional[Sequence[str]] = None,
        columns: Optional[Sequence[int]] = None,
        support_guard: int = 40,
        threads: int = 1,
        skipped: Optional[List[Tuple[str, ...]]] = None,
    ) -> List[SparseFormula]:
        """
        Best k-term OLS formula (with intercept) for k = 1..k_max by exhaustive enumeration

        Subsets are ranked by residual sum of squares from the centered normal
        equations; every subset within a relative 1e-9 of the best is refit with
        numpy.linalg.lstsq and the lowest refit MSE wins, earliest subset on ties.

        Args:
            X: N x s raw-scale columns of the support
            labels: s labels (defaults to c0, c1, ...)
            columns: s feature indices recorded on each formula
            skipped: receives label tuples of singular subsets

        Returns:
            One SparseFormula per k
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, s = X.shape
        labels = tuple(labels) if labels is not None else tuple(f"c{j}" for j in range(s))
        columns = tuple(columns) if columns is not None else tuple(range(s))
        if s > support_guard:
            raise SupportTooLargeError(
                f"support of {s} features exceeds the guard of {support_guard}; "
                f"use a larger lambda_hat or a smaller cap"
            )
        if s == 0:
            raise ValueError("empty support: the l1 path removed every feature")
        if k_max > s:
            logger.warning(f"k_max={k_max} exceeds the support size {s}; searching up to k={s}")
            k_max = s

        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        gram = Xc.T @ Xc
        cross = Xc.T @ yc
        total = float(yc @ yc)

        formulas = []
        for k in range(1, k_max + 1):
            subsets = list(itertools.combinations(range(s), k))
            rss = self._subset_rss(gram, cross, total, subsets, threads)
            singular = np.isnan(rss)
            if singular.any():
                names = [tuple(labels[j] for j in subsets[i]) for i in np.flatnonzero(singular)]
                logger.info(f"k={k}: skipped {len(names)} singular subsets")
                if skipped is not None:
                    skipped.extend(names)
            if singular.all():
                raise SolverError(f"every {k}-term subset is singular")

            best_rss = float(np.nanmin(rss))
            cutoff = best_rss + CANDIDATE_SLACK * abs(best_rss) + CANDIDATE_SLACK * total
            candidates = [subsets[i] for i in np.flatnonzero(~singular & (rss <= cutoff))]

            best = None
            for subset in candidates:
                coef, mse, pred = self._refit(X, y, subset)
                if best is None or mse < best[1]:
                    best = (subset, mse, coef, pred)
            subset, mse, coef, pred = best
            delta = np.abs(y - pred)
            formulas.append(
                SparseFormula(
                    terms=tuple((labels[j], float(c)) for j, c in zip(subset, coef[1:])),
                    intercept=float(coef[0]),
                    errors=ErrorReport(float(delta.mean()), mse, float(delta.max())),
                    columns=tuple(int(columns[j]) for j in subset),
                )
            )
            logger.info(f"k={k}: {' + '.join(labels[j] for j in subset)} (MSE {mse:.6g})")
        return formulas

    def errors_nonincreasing_check(self, formulas: Sequence[SparseFormula]) -> bool:
        """True when training MSE never rises with k (up to rounding)"""
        mses = [f.errors.mse for f in formulas]
        return all(b <= a + MSE_SLACK * max(abs(a), 1e-300) for a, b in zip(mses, mses[1:]))

    def design(self, fm: FeatureMatrix, y: np.ndarray, scaling: str = "unit-norm") -> Tuple[np.ndarray, np.ndarray, float]:
        """
        Standardized design matrix and target for the l1 path

        unit-norm scales standardized columns and the centered target to unit
        Euclidean norm; raw keeps unit-variance columns and the raw target.

        Returns:
            (V, target, target_scale) with y - mean(y) = target_scale * target under unit-norm
        """
        standardized, _ = feature_service.standardize(fm)
        V = standardized.values
        y = np.asarray(y, dtype=float)
        if scaling == "raw":
            return V, y, 1.0
        if scaling != "unit-norm":
            raise ValueError(f"unknown design scaling '{scaling}'")
        V /= math.sqrt(len(y))
        centered = y - y.mean()
        scale = float(np.linalg.norm(centered)) or 1.0
        return V, centered / scale, scale

    def run(self, ds: DataSet, config: SparsifyConfig, threads: int = 1) -> SparsifyOutcome:
        """expand -> standardize -> l1 path -> support -> l0 on one dataset"""
        fm = self._expand(ds, config)
        V, target, scale = self.design(fm, ds.y, config.design_scaling)
        path, results = self.lasso_path(
            V,
            target,
            config.lambdas(),
            tol=config.tol,
            max_sweeps=config.max_sweeps,
            warm_start=config.warm_start,
            target_scale=scale,
            threads=threads,
        )
        del V
        support = self.select_support(path, config.cap)
        skipped: List[Tuple[str, ...]] = []
        formulas = self.l0_search(
            fm.values[:, support],
            ds.y,
            config.k_max,
            labels=[fm.labels[j] for j in support],
            columns=support,
            support_guard=config.support_guard,
            threads=threads,
            skipped=skipped,
        )
        return SparsifyOutcome(fm, path, results, support, formulas, scale, skipped)

    def _expand(self, ds: DataSet, config: SparsifyConfig) -> FeatureMatrix:
        if config.cache_dir is None:
            return feature_service.expand(ds.X, ds.labels, config.max_degree)
        cache = FeatureCache(config.cache_dir)
        key = cache.key(ds.X, ds.labels, ds.scheme.model_dump_json(), config.max_degree)
        fm = cache.load(key)
        if fm is None:
            fm = feature_service.expand(ds.X, ds.labels, config.max_degree)
            cache.store(key, fm)
        else:
            logger.info(f"Loaded cached feature matrix {fm.shape}")
        return fm

    def _objective(self, residual: np.ndarray, gamma: np.ndarray, lambda_hat: float) -> float:
        return float(residual @ residual) + lambda_hat * float(np.abs(gamma).sum())

    def _subset_rss(
        self,
        gram: np.ndarray,
        cross: np.ndarray,
        total: float,
        subsets: List[Tuple[int, ...]],
        threads: int,
    ) -> np.ndarray:
        """RSS per subset from the centered normal equations; NaN marks singular subsets"""
        index = np.array(subsets, dtype=int)

        def batch(start: int) -> np.ndarray:
            idx = index[start : start + SUBSET_BATCH]
            G = gram[idx[:, :, None], idx[:, None, :]]
            g = cross[idx]
            eigvals, eigvecs = np.linalg.eigh(G)
            top = np.abs(eigvals).max(axis=1)
            singular = (eigvals.min(axis=1) <= SINGULAR_TOLERANCE * top) | (top == 0.0)
            safe = np.where(singular[:, None], 1.0, eigvals)
            projected = np.einsum("bij,bi->bj", eigvecs, g)
            rss = total - np.sum(projected ** 2 / safe, axis=1)
            rss[singular] = np.nan
            return rss

        starts = list(range(0, len(index), SUBSET_BATCH))
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(batch, starts))
        else:
            parts = [batch(start) for start in starts]
        return np.concatenate(parts)

    def _refit(self, X: np.ndarray, y: np.ndarray, subset: Tuple[int, ...]) -> Tuple[np.ndarray, float, np.ndarray]:
        design = np.column_stack([np.ones(len(y)), X[:, list(subset)]])
        coef = np.linalg.lstsq(design, y, rcond=None)[0]
        pred = design @ coef
        return coef, float(np.mean((y - pred) ** 2)), pred


# Global instance
sparsify_service = SparsifyService()
