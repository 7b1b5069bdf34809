"""
Feature-space expansion for FormulaHunter
Multiset products of base descriptors up to degree 3, standardization and an on-disk cache
"""

import hashlib
import itertools
import json
import logging
import struct
from math import comb
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.models.domain import FeatureMatrix, StandardTransform

logger = logging.getLogger(__name__)

ZERO_VARIANCE_TOLERANCE = 1e-12

CACHE_MAGIC = b"FHFM"
CACHE_VERSION = 1


def tier_size(d: int, k: int) -> int:
    """Number of size-k multisets over d base columns, C(d+k-1, k)"""
    return comb(d + k - 1, k)


class FeatureService:
    """Expands descriptors into candidate functions and standardizes them"""

    def expand(self, base: np.ndarray, labels: Sequence[str], max_degree: int = 3) -> FeatureMatrix:
        """
        All multisets of base columns of size 1..max_degree as element-wise products

        Columns come out graded by degree, lexicographic inside a degree.
        Non-finite and zero-variance columns are removed and listed in
        FeatureMatrix.pruned as (label, reason).

        Args:
            base: N x d descriptor matrix
            labels: d unique base labels
            max_degree: 2 or 3

        Returns:
            Column-major FeatureMatrix with '*'-joined product labels
        """
        base = np.asarray(base, dtype=float)
        labels = tuple(labels)
        if base.ndim != 2 or base.shape[1] != len(labels):
            raise ValueError(f"base matrix {base.shape} does not match {len(labels)} labels")
        n, d = base.shape
        if d < 1 or n < 2:
            raise ValueError(f"expansion needs d >= 1 and N >= 2, got N={n}, d={d}")
        if len(set(labels)) != d:
            raise ValueError("base labels must be unique")
        if max_degree < 1:
            raise ValueError(f"max_degree must be >= 1, got {max_degree}")

        tiers = [tier_size(d, k) for k in range(1, max_degree + 1)]
        values = np.empty((n, sum(tiers)), order="F")
        kept_labels: List[str] = []
        kept_factors: List[Tuple[int, ...]] = []
        pruned: List[Tuple[str, str]] = []
        columns = np.asfortranarray(base)

        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, max_degree + 1):
                for combo in itertools.combinations_with_replacement(range(d), k):
                    column = columns[:, combo[0]].copy()
                    for j in combo[1:]:
                        column *= columns[:, j]
                    label = "*".join(labels[j] for j in combo)
                    reason = self._prune_reason(column)
                    if reason:
                        pruned.append((label, reason))
                        continue
                    values[:, len(kept_labels)] = column
                    kept_labels.append(label)
                    kept_factors.append(combo)

        values = values[:, : len(kept_labels)]
        if pruned:
            logger.info(f"Pruned {len(pruned)} candidate functions: {[label for label, _ in pruned[:10]]}")
        logger.info(f"Expanded {d} descriptors to {len(kept_labels)} candidate functions (tiers {tiers})")
        return FeatureMatrix(
            values=values,
            labels=tuple(kept_labels),
            factors=tuple(kept_factors),
            means=values.mean(axis=0),
            stds=values.std(axis=0),
            base_labels=labels,
            pruned=tuple(pruned),
            tier_counts=tuple(tiers),
        )

    def standardize(self, fm: FeatureMatrix) -> Tuple[FeatureMatrix, StandardTransform]:
        """Center every column and scale it to unit standard deviation"""
        means = fm.values.mean(axis=0)
        stds = fm.values.std(axis=0)
        if np.any(stds == 0.0):
            raise ValueError("standardize needs columns with nonzero variance")
        values = np.asfortranarray((fm.values - means) / stds)
        standardized = FeatureMatrix(
            values=values,
            labels=fm.labels,
            factors=fm.factors,
            means=values.mean(axis=0),
            stds=values.std(axis=0),
            base_labels=fm.base_labels,
            pruned=fm.pruned,
            tier_counts=fm.tier_counts,
        )
        return standardized, StandardTransform(means, stds)

    def unstandardize_coeffs(
        self, gamma_std: np.ndarray, intercept_std: float, transform: StandardTransform
    ) -> Tuple[np.ndarray, float]:
        """Coefficients and intercept that give the same predictions on raw columns"""
        gamma_std = np.asarray(gamma_std, dtype=float)
        if gamma_std.shape != transform.scales.shape:
            raise ValueError(f"{len(gamma_std)} coefficients for {len(transform.scales)} transformed columns")
        gamma_raw = gamma_std / transform.scales
        intercept_raw = float(intercept_std - gamma_raw @ transform.means)
        return gamma_raw, intercept_raw

    def _prune_reason(self, column: np.ndarray) -> Optional[str]:
        if not np.all(np.isfinite(column)):
            return "non-finite"
        mean = float(column.mean())
        if float(column.std()) <= ZERO_VARIANCE_TOLERANCE * max(1.0, abs(mean)):
            return "zero-variance"
        return None


class FeatureCache:
    """
    Expanded feature matrices on disk, keyed by content hash

    File layout, little-endian: magic b"FHFM", uint32 version, uint64 N,
    uint64 M, uint32 B, B base labels, M labels, M factor records
    (uint32 count + uint32 indices), N*M float64 column-major values,
    uint32 P, P pruned (label, reason) pairs, uint32 T, T uint64 tier counts.
    Strings are uint32 byte length + UTF-8 bytes.
    """

    def __init__(self, cache_dir: Union[str, Path]):
        self.cache_dir = Path(cache_dir)

    def key(self, base: np.ndarray, labels: Sequence[str], scheme_json: str, degree: int) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(base, dtype="<f8").tobytes())
        digest.update(json.dumps(list(labels)).encode("utf-8"))
        digest.update(scheme_json.encode("utf-8"))
        digest.update(struct.pack("<I", degree))
        return digest.hexdigest()

    def path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.fhfm"

    def load(self, key: str) -> Optional[FeatureMatrix]:
        path = self.path(key)
        if not path.is_file():
            return None
        try:
            with path.open("rb") as fh:
                return self.read(fh)
        except (ValueError, struct.error) as e:
            logger.warning(f"Ignoring unreadable feature cache {path}: {e}")
            return None

    def store(self, key: str, fm: FeatureMatrix) -> Path:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(key)
        tmp = path.with_suffix(".tmp")
        with tmp.open("wb") as fh:
            self.write(fh, fm)
        tmp.replace(path)
        logger.info(f"Cached feature matrix {fm.shape} at {path}")
        return path

    def write(self, fh: BinaryIO, fm: FeatureMatrix):
        n, m = fm.shape
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IQQ", CACHE_VERSION, n, m))
        fh.write(struct.pack("<I", len(fm.base_labels)))
        for label in fm.base_labels:
            self._write_str(fh, label)
        for label in fm.labels:
            self._write_str(fh, label)
        for factors in fm.factors:
            fh.write(struct.pack(f"<I{len(factors)}I", len(factors), *factors))
        fh.write(np.asarray(fm.values, dtype="<f8").tobytes(order="F"))
        fh.write(struct.pack("<I", len(fm.pruned)))
        for label, reason in fm.pruned:
            self._write_str(fh, label)
            self._write_str(fh, reason)
        fh.write(struct.pack("<I", len(fm.tier_counts)))
        fh.write(struct.pack(f"<{len(fm.tier_counts)}Q", *fm.tier_counts))

    def read(self, fh: BinaryIO) -> FeatureMatrix:
        if fh.read(4) != CACHE_MAGIC:
            raise ValueError("not a feature cache file")
        version, n, m = struct.unpack("<IQQ", fh.read(20))
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        (b,) = struct.unpack("<I", fh.read(4))
        base_labels = tuple(self._read_str(fh) for _ in range(b))
        labels = tuple(self._read_str(fh) for _ in range(m))
        factors = []
        for _ in range(m):
            (count,) = struct.unpack("<I", fh.read(4))
            factors.append(tuple(struct.unpack(f"<{count}I", fh.read(4 * count))))
        raw = fh.read(8 * n * m)
        if len(raw) != 8 * n * m:
            raise ValueError("truncated value block")
        values = np.frombuffer(raw, dtype="<f8").reshape((n, m), order="F").astype(float, order="F")
        (p,) = struct.unpack("<I", fh.read(4))
        pruned = tuple((self._read_str(fh), self._read_str(fh)) for _ in range(p))
        (t,) = struct.unpack("<I", fh.read(4))
        tiers = struct.unpack(f"<{t}Q", fh.read(8 * t))
        return FeatureMatrix(
            values=values,
            labels=labels,
            factors=tuple(factors),
            means=values.mean(axis=0),
            stds=values.std(axis=0),
            base_labels=base_labels,
            pruned=pruned,
            tier_counts=tuple(tiers),
        )

    def _write_str(self, fh: BinaryIO, text: str):
        data = text.encode("utf-8")
        fh.write(struct.pack("<I", len(data)))
        fh.write(data)

    def _read_str(self, fh: BinaryIO) -> str:
        (length,) = struct.unpack("<I", fh.read(4))
        return fh.read(length).decode("utf-8")


# Global instance
feature_service = FeatureService()
