"""
Dataset assembly for FormulaHunter
Mixing-pair enumeration, planted synthetic targets, splits, CV folds and CSV I/O
"""

import itertools
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.models.config import DatasetConfig, DescriptorScheme
from app.models.domain import (
    ELEMENTS,
    Configuration,
    DataSet,
    ElementalTable,
    MixPair,
    Phase,
    PlantedModel,
    SplitPlan,
)
from app.models.errors import DatasetError, MissingArtifactError, ModelTermError
from app.services.descriptor_service import descriptor_service

logger = logging.getLogger(__name__)

# 1 GPa * A^3 per formula unit, times Avogadro, in kJ/mol
GPA_A3_TO_KJ_PER_MOL = 0.6022

DEFAULT_RATIOS = (0.25, 0.375, 0.5, 0.625, 0.75)
DEFAULT_NOISE_FRACTION = 0.01

MARGULES_TERM = "m*(1-m)*mean(Y)*inv(mean(V))*diff(V)^2"
# diff(V) is the half difference, so |Vi - Vj|^2 = 4 * diff(V)^2
MARGULES_COEFFICIENT = 4.0 * GPA_A3_TO_KJ_PER_MOL / 6.0


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class DatasetService:
    """Builds labeled datasets and partitions them for fitting"""

    def enumerate_pairs(self, ratios: Sequence[float], phase: Phase = Phase.MONAZITE) -> List[MixPair]:
        """All 105 element pairs crossed with the ratios, pair-major order"""
        ratios = [float(r) for r in ratios]
        if not ratios:
            raise ValueError("at least one mixing ratio is required")
        if len(set(ratios)) != len(ratios):
            raise ValueError(f"mixing ratios must be distinct, got {ratios}")
        if any(not 0.0 < r < 1.0 for r in ratios):
            raise ValueError(f"mixing ratios must lie in (0, 1), got {ratios}")
        return [
            MixPair(li, lj, ratio, phase)
            for li, lj in itertools.combinations(ELEMENTS, 2)
            for ratio in ratios
        ]

    def configuration_pairs(self, configuration: Configuration, ratios: Sequence[float] = DEFAULT_RATIOS) -> List[MixPair]:
        pairs: List[MixPair] = []
        for phase in Configuration(configuration).phases:
            pairs += self.enumerate_pairs(ratios, phase)
        return pairs

    def margules_baseline(self, table: ElementalTable, pair: MixPair) -> float:
        """m(1-m) * mean(Y) / (6 mean(V)) * (Vi - Vj)^2, in kJ/mol"""
        vi = table.get(pair.li, pair.phase, "V")
        vj = table.get(pair.lj, pair.phase, "V")
        yi = table.get(pair.li, pair.phase, "Y")
        yj = table.get(pair.lj, pair.phase, "Y")
        w = (yi + yj) / 2.0 / (6.0 * (vi + vj) / 2.0) * (vi - vj) ** 2
        return pair.m * (1.0 - pair.m) * w * GPA_A3_TO_KJ_PER_MOL

    def margules_model(self, noise_sigma: Optional[float] = 0.0, seed: int = 0) -> PlantedModel:
        """The baseline expressed as a one-term planted model"""
        return PlantedModel(((MARGULES_TERM, MARGULES_COEFFICIENT),), noise_sigma, seed)

    def planted_model(self, config: DatasetConfig, seed: int) -> PlantedModel:
        return PlantedModel(
            tuple((t.term, t.coefficient) for t in config.planted),
            noise_sigma=config.noise_sigma,
            seed=seed,
        )

    def build_dataset(
        self,
        table: ElementalTable,
        pairs: Sequence[MixPair],
        y: np.ndarray,
        scheme: DescriptorScheme,
        configuration: Configuration,
    ) -> DataSet:
        X, labels, dropped = descriptor_service.build_matrix(table, pairs, scheme)
        return DataSet(tuple(pairs), X, y, labels, configuration, scheme, dropped)

    def generate_synthetic(
        self,
        table: ElementalTable,
        scheme: DescriptorScheme,
        model: PlantedModel,
        configuration: Configuration,
        ratios: Sequence[float] = DEFAULT_RATIOS,
        noise_fraction: float = DEFAULT_NOISE_FRACTION,
    ) -> DataSet:
        """
        Dataset whose targets follow a closed-form planted model

        Args:
            model: '*'-joined products of scheme labels with coefficients
            noise_fraction: relative noise used when model.noise_sigma is None

        Returns:
            DataSet with y = sum(coefficient * term) + N(0, sigma^2)
        """
        pairs = self.configuration_pairs(configuration, ratios)
        X, labels, dropped = descriptor_service.build_matrix(table, pairs, scheme)
        columns = {label: X[:, i] for i, label in enumerate(labels)}

        y = np.zeros(len(pairs))
        for term, coefficient in model.terms:
            y = y + coefficient * self._term_values(term, columns)

        sigma = model.noise_sigma
        if sigma is None:
            sigma = noise_fraction * float(y.max() - y.min()) if len(y) else 0.0
        if sigma > 0.0:
            y = y + sigma * make_rng(model.seed).standard_normal(len(y))
        logger.info(
            f"Generated {configuration.value} dataset: {len(pairs)} points, "
            f"{len(labels)} descriptors, noise sigma {sigma:.6g}"
        )
        return DataSet(tuple(pairs), X, y, labels, configuration, scheme, dropped)

    def term_values(self, term: str, ds: DataSet) -> np.ndarray:
        """Values of a '*'-joined product of dataset labels"""
        return self._term_values(term, {label: ds.X[:, i] for i, label in enumerate(ds.labels)})

    def _term_values(self, term: str, columns) -> np.ndarray:
        factors = [f.strip() for f in term.split("*")]
        if not factors or any(not f for f in factors):
            raise ModelTermError("", term)
        values = None
        for factor in factors:
            if factor not in columns:
                raise ModelTermError(factor, term)
            values = columns[factor] if values is None else values * columns[factor]
        return values

    def with_scheme(self, ds: DataSet, table: ElementalTable, scheme: DescriptorScheme) -> DataSet:
        """Same points and targets under another descriptor scheme"""
        return self.build_dataset(table, ds.pairs, ds.y, scheme, ds.configuration)

    def split(self, ds: DataSet, ratio: float, seed: int) -> SplitPlan:
        """Seeded random train/test partition; train size is round(ratio * N)"""
        if not 0.0 < ratio < 1.0:
            raise ValueError(f"train fraction must lie in (0, 1), got {ratio}")
        n = len(ds)
        if n < 2:
            raise DatasetError(f"cannot split a dataset of {n} point(s)")
        order = make_rng(seed).permutation(n)
        n_train = min(max(int(round(ratio * n)), 1), n - 1)
        return SplitPlan(np.sort(order[:n_train]), np.sort(order[n_train:]), seed)

    def cv_folds(self, ds: DataSet, k: int, seed: int) -> List[SplitPlan]:
        """k plans whose test sets partition the dataset"""
        if k < 2:
            raise ValueError(f"need at least 2 folds, got {k}")
        n = len(ds)
        if k > n:
            raise DatasetError(f"{k} folds requested for {n} points")
        order = make_rng(seed).permutation(n)
        plans = []
        for fold in np.array_split(order, k):
            test = np.sort(fold)
            train = np.setdiff1d(np.arange(n), test)
            plans.append(SplitPlan(train, test, seed))
        return plans

    def write_csv(self, ds: DataSet, path: Union[str, Path]) -> Path:
        """One row per point: descriptor labels, y, pair, phase, m"""
        frame = pd.DataFrame(ds.X, columns=list(ds.labels))
        frame["y"] = ds.y
        frame["pair"] = [p.key for p in ds.pairs]
        frame["phase"] = [p.phase.value for p in ds.pairs]
        if "m" not in ds.labels:
            frame["m"] = [p.m for p in ds.pairs]
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding="utf-8")
        logger.info(f"Wrote {len(ds)} points to {path}")
        return path

    def read_csv(
        self,
        path: Union[str, Path],
        scheme: Optional[DescriptorScheme] = None,
        configuration: Optional[Configuration] = None,
    ) -> DataSet:
        """Load a dataset written by write_csv; descriptor labels are the columns before y"""
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError([path])
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
        columns = list(frame.columns)
        if "y" not in columns or "pair" not in columns or "phase" not in columns:
            raise DatasetError(f"{path}: expected columns y, pair and phase")
        labels = tuple(columns[: columns.index("y")])
        m_column = "m" if "m" in columns else None
        if m_column is None:
            raise DatasetError(f"{path}: no mixing-ratio column 'm'")

        pairs = []
        for row_number, (key, phase, m) in enumerate(zip(frame["pair"], frame["phase"], frame[m_column]), start=2):
            try:
                li, lj = str(key).split("-")
                pairs.append(MixPair(li, lj, float(m), phase))
            except ValueError as e:
                raise DatasetError(f"{path} line {row_number}: bad pair '{key}' ({e})") from e

        phases = {p.phase for p in pairs}
        if configuration is None:
            if phases == {Phase.MONAZITE}:
                configuration = Configuration.MONAZITE_ONLY
            elif phases == {Phase.XENOTIME}:
                configuration = Configuration.XENOTIME_ONLY
            else:
                configuration = Configuration.FUSED
        scheme = scheme or DescriptorScheme()
        dropped = tuple(label for label in descriptor_service.labels(scheme) if label not in labels)
        try:
            return DataSet(
                tuple(pairs),
                frame[list(labels)].to_numpy(dtype=float),
                frame["y"].to_numpy(dtype=float),
                labels,
                configuration,
                scheme,
                dropped,
            )
        except ValueError as e:
            raise DatasetError(f"{path}: {e}") from e


# Global instance
dataset_service = DatasetService()
