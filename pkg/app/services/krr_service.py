"""
Kernel ridge regression for FormulaHunter
Cholesky fits, predictions, error metrics, grid search with local refinement and cross-validation
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from app.models.config import GridSpec, family_from_name
from app.models.domain import DataSet, ErrorReport, KernelFamily, KernelSpec, KrrModel, SplitPlan
from app.models.errors import SolverError
from app.services.dataset_service import dataset_service
from app.services.kernel_service import kernel_service

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-12
RESIDUAL_TOLERANCE = 1e-8

# Grid coordinates are (log10 lambda, log10 gamma, log10 c); c is None for non-polynomial kernels
GridPoint = Tuple[float, float, Optional[float]]


@dataclass(frozen=True)
class TrialResult:
    """One evaluated grid point"""

    family: str
    point: GridPoint
    train: Optional[ErrorReport] = None
    test: Optional[ErrorReport] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def as_row(self) -> Dict[str, object]:
        log_lambda, log_gamma, log_c = self.point
        row: Dict[str, object] = {
            "family": self.family,
            "log10_lambda": log_lambda,
            "log10_gamma": log_gamma,
            "log10_c": log_c if log_c is not None else "",
        }
        for prefix, report in (("train_", self.train), ("test_", self.test)):
            keys = ErrorReport(0.0, 0.0, 0.0).as_dict(prefix)
            row.update(report.as_dict(prefix) if report else {k: "" for k in keys})
        row["status"] = "ok" if self.ok else self.failure
        return row


@dataclass
class GridSearchResult:
    spec: KernelSpec
    lam: float
    best: TrialResult
    trials: List[TrialResult] = field(default_factory=list)

    @property
    def test_errors(self) -> ErrorReport:
        return self.best.test


@dataclass(frozen=True)
class FoldResult:
    fold: int
    train: ErrorReport
    test: ErrorReport


def make_spec(family: str, log10_gamma: float, log10_c: Optional[float] = None) -> KernelSpec:
    """KernelSpec from a family name such as 'poly3' and log10 hyperparameters"""
    kind, degree = family_from_name(family)
    gamma = 10.0 ** log10_gamma
    if kind is KernelFamily.POLYNOMIAL:
        return KernelSpec(kind, gamma, degree=degree, c=0.0 if log10_c is None else 10.0 ** log10_c)
    return KernelSpec(kind, gamma)


class KrrService:
    """Fits and evaluates kernel ridge regression models"""

    def fit(
        self,
        X_train: np.ndarray,
        y_train: np.ndarray,
        spec: KernelSpec,
        lam: float,
        standardize: bool = False,
    ) -> KrrModel:
        """
        Solve (K + lambda I) alpha = y by Cholesky factorization

        Args:
            standardize: center and scale each descriptor by its training statistics

        Returns:
            KrrModel holding alpha and the retained training rows
        """
        X = np.asarray(X_train, dtype=float)
        y = np.asarray(y_train, dtype=float)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise ValueError(f"need matching non-empty X and y, got {X.shape} and {y.shape}")
        if not lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {lam}")

        shift = scale = None
        if standardize:
            shift = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0.0] = 1.0
        K = kernel_service.gram(spec, self._transform(X, shift, scale)).entries
        alpha = self._solve(K, y, lam)
        return KrrModel(alpha, spec, lam, X, shift, scale)

    def predict(self, model: KrrModel, X_new: np.ndarray) -> np.ndarray:
        """y_hat = alpha^T K' with K' between training and new points"""
        X_new = np.asarray(X_new, dtype=float)
        if X_new.size == 0:
            return np.zeros(0)
        train = self._transform(model.X_train, model.shift, model.scale)
        new = self._transform(np.atleast_2d(X_new), model.shift, model.scale)
        return kernel_service.cross_gram(model.spec, train, new).T @ model.alpha

    def errors(self, y_true: Sequence[float], y_pred: Sequence[float]) -> ErrorReport:
        """MAE, MSE and maximum absolute error"""
        y_true = np.asarray(y_true, dtype=float)
        y_pred = np.asarray(y_pred, dtype=float)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise ValueError(f"error metrics need equal-length vectors, got {y_true.shape} and {y_pred.shape}")
        if len(y_true) == 0:
            raise ValueError("error metrics need at least one point")
        delta = np.abs(y_true - y_pred)
        return ErrorReport(float(delta.mean()), float(np.mean(delta ** 2)), float(delta.max()))

    def grid_search(
        self,
        ds: DataSet,
        split: SplitPlan,
        family: str,
        grid: GridSpec,
        standardize: bool = True,
        threads: int = 1,
    ) -> GridSearchResult:
        """
        Minimize test-set MAE over the log grid, then refine around the incumbent

        Each refinement round halves the step and evaluates the 3^n neighborhood
        of the incumbent inside the original ranges. Ties keep the earliest
        point in (lambda, gamma, c) lexicographic grid order.
        """
        X_train, y_train = ds.X[split.train], ds.y[split.train]
        X_test, y_test = ds.X[split.test], ds.y[split.test]
        polynomial = family_from_name(family)[0] is KernelFamily.POLYNOMIAL
        axes = {"lambda": grid.axis("lambda"), "gamma": grid.axis("gamma")}
        if polynomial:
            axes["c"] = grid.axis("c")

        points = [self._point(combo, polynomial) for combo in itertools.product(*axes.values())]
        evaluated: Dict[GridPoint, TrialResult] = {}
        ordered = self._evaluate(family, points, X_train, y_train, X_test, y_test, standardize, threads)
        evaluated.update((t.point, t) for t in ordered)
        best = self._best(ordered)
        if best is None:
            failures = "; ".join(sorted({t.failure for t in ordered if t.failure}))[:2000]
            raise SolverError(f"every {family} grid point failed: {failures}")

        names = list(axes)
        for round_index in range(1, grid.refinement_rounds + 1):
            steps = [grid.step(name) / 2 ** round_index for name in names]
            incumbent = [v for v in best.point if v is not None]
            local = []
            for offsets in itertools.product((-1, 0, 1), repeat=len(names)):
                combo = []
                for name, center, step, offset in zip(names, incumbent, steps, offsets):
                    lo, hi = getattr(grid, f"log10_{name}")
                    combo.append(min(max(round(center + offset * step, 12), lo), hi))
                point = self._point(combo, polynomial)
                if point not in evaluated and point not in local:
                    local.append(point)
            if not local:
                continue
            trials = self._evaluate(family, local, X_train, y_train, X_test, y_test, standardize, threads)
            evaluated.update((t.point, t) for t in trials)
            ordered += trials
            challenger = self._best(trials)
            if challenger is not None and challenger.test.mae < best.test.mae:
                best = challenger
            logger.debug(f"{family} refinement {round_index}: incumbent {best.point} test MAE {best.test.mae:.6g}")

        log_lambda, log_gamma, log_c = best.point
        logger.info(
            f"Best {family}: log10 lambda {log_lambda:g}, log10 gamma {log_gamma:g}"
            + (f", log10 c {log_c:g}" if log_c is not None else "")
            + f", test MAE {best.test.mae:.6g}"
        )
        return GridSearchResult(make_spec(family, log_gamma, log_c), 10.0 ** log_lambda, best, ordered)

    def cross_validate(
        self,
        ds: DataSet,
        k: int,
        seed: int,
        spec: KernelSpec,
        lam: float,
        standardize: bool = True,
    ) -> List[FoldResult]:
        """Refit fixed hyperparameters on each fold; train and test errors per fold"""
        results = []
        for fold, plan in enumerate(dataset_service.cv_folds(ds, k, seed), start=1):
            model = self.fit(ds.X[plan.train], ds.y[plan.train], spec, lam, standardize)
            train = self.errors(ds.y[plan.train], self.predict(model, ds.X[plan.train]))
            test = self.errors(ds.y[plan.test], self.predict(model, ds.X[plan.test]))
            results.append(FoldResult(fold, train, test))
        return results

    def overfit_diagnostic(
        self, train: ErrorReport, test: ErrorReport, threshold: float = 10.0
    ) -> Tuple[bool, float]:
        """Flag when test MAE / train MAE exceeds the threshold; zero train MAE gives +inf"""
        if train.mae == 0.0:
            if test.mae == 0.0:
                return False, 1.0
            return True, math.inf
        ratio = test.mae / train.mae
        return ratio > threshold, ratio

    def _solve(self, K: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
        n = len(K)
        A = K + lam * np.eye(n)
        try:
            factor = cho_factor(A, lower=True, check_finite=True)
        except (LinAlgError, ValueError):
            jitter = JITTER_SCALE * float(np.trace(K)) / n
            logger.debug(f"Cholesky failed at lambda={lam:g}; retrying with jitter {jitter:g}")
            A = A + jitter * np.eye(n)
            try:
                factor = cho_factor(A, lower=True, check_finite=True)
            except (LinAlgError, ValueError) as e:
                raise SolverError(
                    f"K + lambda I is not positive definite at lambda={lam:g} ({e}); use a larger lambda"
                ) from e
        alpha = cho_solve(factor, y)
        residual = float(np.max(np.abs(A @ alpha - y)))
        bound = RESIDUAL_TOLERANCE * float(np.max(np.abs(y)))
        if not np.all(np.isfinite(alpha)) or residual > bound:
            raise SolverError(
                f"ill-conditioned solve at lambda={lam:g} (residual {residual:.3g}); use a larger lambda"
            )
        return alpha

    def _transform(self, X: np.ndarray, shift: Optional[np.ndarray], scale: Optional[np.ndarray]) -> np.ndarray:
        if shift is None:
            return X
        return (X - shift) / scale

    def _point(self, combo: Sequence[float], polynomial: bool) -> GridPoint:
        values = [float(v) for v in combo]
        return (values[0], values[1], values[2] if polynomial else None)

    def _evaluate(
        self,
        family: str,
        points: List[GridPoint],
        X_train: np.ndarray,
        y_train: np.ndarray,
        X_test: np.ndarray,
        y_test: np.ndarray,
        standardize: bool,
        threads: int,
    ) -> List[TrialResult]:
        """Evaluate grid points, reusing one Gram matrix per (gamma, c); results keep input order"""
        shift = scale = None
        if standardize:
            shift = X_train.mean(axis=0)
            scale = X_train.std(axis=0)
            scale[scale == 0.0] = 1.0
        train = self._transform(X_train, shift, scale)
        test = self._transform(X_test, shift, scale)

        groups: Dict[Tuple[float, Optional[float]], List[GridPoint]] = {}
        for point in points:
            groups.setdefault((point[1], point[2]), []).append(point)

        def run_group(key: Tuple[float, Optional[float]]) -> List[TrialResult]:
            log_gamma, log_c = key
            spec = make_spec(family, log_gamma, log_c)
            try:
                K = kernel_service.gram(spec, train).entries
                K_test = kernel_service.cross_gram(spec, train, test)
            except (ValueError, FloatingPointError) as e:
                return [TrialResult(family, p, failure=str(e)) for p in groups[key]]
            if not (np.all(np.isfinite(K)) and np.all(np.isfinite(K_test))):
                return [TrialResult(family, p, failure="non-finite kernel values") for p in groups[key]]
            out = []
            for point in groups[key]:
                try:
                    alpha = self._solve(K, y_train, 10.0 ** point[0])
                except SolverError as e:
                    out.append(TrialResult(family, point, failure=str(e)))
                    continue
                out.append(
                    TrialResult(
                        family,
                        point,
                        train=self.errors(y_train, K @ alpha),
                        test=self.errors(y_test, K_test.T @ alpha),
                    )
                )
            return out

        keys = list(groups)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                grouped = list(pool.map(run_group, keys))
        else:
            grouped = [run_group(key) for key in keys]
        by_point = {t.point: t for trials in grouped for t in trials}
        failed = sum(1 for t in by_point.values() if not t.ok)
        if failed:
            logger.debug(f"{family}: {failed} of {len(points)} grid points failed")
        return [by_point[p] for p in points]

    def _best(self, trials: List[TrialResult]) -> Optional[TrialResult]:
        best = None
        for trial in trials:
            if trial.ok and (best is None or trial.test.mae < best.test.mae):
                best = trial
        return best


# Global instance
krr_service = KrrService()
