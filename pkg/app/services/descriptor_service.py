"""
Descriptor construction for FormulaHunter
Turns (Li, Lj, m, phase) into labeled descriptor vectors for both descriptor families
"""

import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.models.config import DescriptorScheme
from app.models.domain import (
    PROPERTY_NAMES,
    BuildReport,
    DescriptorVector,
    ElementalTable,
    MixPair,
    SchemeFamily,
)
from app.models.errors import DescriptorError, PropertyLookupError
from app.services.elementals_service import elementals_service

logger = logging.getLogger(__name__)

_PROPERTY_ATOM = re.compile(r"^(x1|x2|x3|mean|diff)\((\w+)\)$")
_POWER = re.compile(r"^(.*)\^(\d+)$")

# (label, value); value None marks a reciprocal of an exact zero
Entry = Tuple[str, Optional[float]]


def weighted_mean(ei: float, ej: float, m: float) -> float:
    _check_ratio(m)
    return m * ei + (1.0 - m) * ej


def quad_weighted_mean(ei: float, ej: float, m: float) -> float:
    _check_ratio(m)
    wi, wj = m * m, (1.0 - m) * (1.0 - m)
    return (wi * ei + wj * ej) / (wi + wj)


def abs_difference(ei: float, ej: float, halved: bool = False) -> float:
    """|ei - ej|; the mean/diff family uses the half difference"""
    diff = abs(ei - ej)
    return diff / 2.0 if halved else diff


def _check_ratio(m: float):
    if not 0.0 < m < 1.0:
        raise ValueError(f"mixing ratio must lie in (0, 1), got {m}")


def _power_label(base: str, p: int) -> str:
    return base if p == 1 else f"{base}^{p}"


class DescriptorService:
    """Builds descriptor vectors and evaluates descriptor labels"""

    def build_krr_descriptors(
        self, table: ElementalTable, pair: MixPair, subset: Sequence[str]
    ) -> DescriptorVector:
        """Triples (x1, x2, x3) per property, in subset order"""
        if not subset:
            raise DescriptorError("elemental subset must not be empty")
        labels: List[str] = []
        values: List[float] = []
        for name in subset:
            ei, ej = self._endmembers(table, pair, name)
            labels += [f"x1({name})", f"x2({name})", f"x3({name})"]
            values += [
                weighted_mean(ei, ej, pair.m),
                quad_weighted_mean(ei, ej, pair.m),
                abs_difference(ei, ej),
            ]
        return DescriptorVector(np.array(values), tuple(labels))

    def build_prior_descriptors(
        self, table: ElementalTable, pair: MixPair, scheme: DescriptorScheme
    ) -> Tuple[DescriptorVector, BuildReport]:
        """
        Mean/diff family for one pair

        Order: mean and diff per property, their reciprocals, the m block and
        its reciprocals, then the V and R power block and its reciprocals.
        A reciprocal of an exactly-zero descriptor is skipped and reported.

        Returns:
            (descriptor vector, build report listing skipped labels)
        """
        if scheme.family is not SchemeFamily.PRIOR_KNOWLEDGE:
            raise DescriptorError(f"expected a PriorKnowledge scheme, got {scheme.family.value}")
        report = BuildReport()
        labels: List[str] = []
        values: List[float] = []
        for label, value in self._prior_entries(table, pair, scheme):
            if value is None:
                report.dropped.append(label)
                continue
            labels.append(label)
            values.append(value)
        if report.dropped:
            logger.debug(f"{pair.key} m={pair.m}: dropped {report.dropped}")
        return DescriptorVector(np.array(values), tuple(labels)), report

    def build_matrix(
        self, table: ElementalTable, pairs: Sequence[MixPair], scheme: DescriptorScheme
    ) -> Tuple[np.ndarray, Tuple[str, ...], Tuple[str, ...]]:
        """
        Descriptor rows for many pairs under one shared label list

        A reciprocal that is undefined for any pair is dropped for every pair.

        Returns:
            (N x d matrix, labels, dataset-wide dropped labels)
        """
        if scheme.family is SchemeFamily.KRR_ORIGINAL:
            rows = [self.build_krr_descriptors(table, p, scheme.elementals) for p in pairs]
            labels = rows[0].labels if rows else self.labels(scheme)
            return np.array([r.values for r in rows]).reshape(len(rows), len(labels)), labels, ()

        all_labels = self.labels(scheme)
        entries = [self._prior_entries(table, p, scheme) for p in pairs]
        undefined = set()
        for row in entries:
            undefined.update(label for label, value in row if value is None)
        keep = [i for i, label in enumerate(all_labels) if label not in undefined]
        labels = tuple(all_labels[i] for i in keep)
        X = np.array([[row[i][1] for i in keep] for row in entries], dtype=float)
        dropped = tuple(label for label in all_labels if label in undefined)
        if dropped:
            logger.info(f"Dropped {len(dropped)} reciprocal descriptors for the whole dataset: {list(dropped)}")
        return X.reshape(len(pairs), len(labels)), labels, dropped

    def labels(self, scheme: DescriptorScheme) -> Tuple[str, ...]:
        """Full label list of a scheme before any reciprocal is dropped"""
        if scheme.family is SchemeFamily.KRR_ORIGINAL:
            return tuple(f"x{k}({name})" for name in scheme.elementals for k in (1, 2, 3))
        return tuple(label for label, _ in self._prior_layout(scheme))

    def evaluate_label(self, table: ElementalTable, pair: MixPair, label: str) -> float:
        """Recompute a descriptor from its label against the elemental table"""
        label = label.strip()
        if label.startswith("inv(") and label.endswith(")"):
            inner = self.evaluate_label(table, pair, label[4:-1])
            if inner == 0.0:
                raise DescriptorError(f"'{label}' is a reciprocal of zero for {pair.key}")
            return 1.0 / inner

        power = _POWER.match(label)
        if power:
            return self._evaluate_atom(table, pair, power.group(1)) ** int(power.group(2))
        return self._evaluate_atom(table, pair, label)

    def _evaluate_atom(self, table: ElementalTable, pair: MixPair, atom: str) -> float:
        if atom == "m":
            return pair.m
        if atom == "(1-m)":
            return 1.0 - pair.m
        match = _PROPERTY_ATOM.match(atom)
        if not match:
            raise DescriptorError(f"cannot parse descriptor label '{atom}'")
        kind, name = match.groups()
        if name not in PROPERTY_NAMES:
            raise DescriptorError(f"unknown property '{name}' in label '{atom}'")
        ei, ej = self._endmembers(table, pair, name)
        if kind == "x1":
            return weighted_mean(ei, ej, pair.m)
        if kind == "x2":
            return quad_weighted_mean(ei, ej, pair.m)
        if kind == "x3":
            return abs_difference(ei, ej)
        if kind == "mean":
            return (ei + ej) / 2.0
        return abs_difference(ei, ej, halved=True)

    def _endmembers(self, table: ElementalTable, pair: MixPair, name: str) -> Tuple[float, float]:
        try:
            return (
                elementals_service.property(table, pair.li, pair.phase, name),
                elementals_service.property(table, pair.lj, pair.phase, name),
            )
        except PropertyLookupError as e:
            raise DescriptorError(str(e)) from e

    def _prior_layout(self, scheme: DescriptorScheme) -> List[Tuple[str, Tuple[str, int]]]:
        """
        Label plus (base atom, power) for every mean/diff-family descriptor, inverses marked 'inv'

        The default scheme yields 58 labels: 36 mean/diff with reciprocals,
        6 in the m block and 16 in the V and R power block.
        """
        # (label, atom, power, has reciprocal)
        blocks: List[List[Tuple[str, str, int, bool]]] = []

        basic = []
        for name in scheme.elementals:
            basic += [(f"mean({name})", f"mean({name})", 1, True), (f"diff({name})", f"diff({name})", 1, True)]
        blocks.append(basic)

        mixing = []
        for p in scheme.m_powers:
            invertible = p in scheme.m_inverse_powers
            mixing += [
                (_power_label("m", p), "m", p, invertible),
                (_power_label("(1-m)", p), "(1-m)", p, invertible),
            ]
        blocks.append(mixing)

        powered = []
        for name, powers in (("V", scheme.v_powers), ("R", scheme.r_powers)):
            if name not in scheme.elementals:
                continue
            for p in powers:
                for kind in ("diff", "mean"):
                    atom = f"{kind}({name})"
                    powered.append((_power_label(atom, p), atom, p, True))
        blocks.append(powered)

        layout: List[Tuple[str, Tuple[str, int]]] = []
        for block in blocks:
            layout += [(label, (atom, p)) for label, atom, p, _ in block]
            if scheme.include_inverses:
                layout += [(f"inv({label})", ("inv:" + atom, p)) for label, atom, p, inv in block if inv]
        return layout

    def _prior_entries(self, table: ElementalTable, pair: MixPair, scheme: DescriptorScheme) -> List[Entry]:
        cache: Dict[Tuple[str, int], float] = {}
        entries: List[Entry] = []
        for label, (atom, p) in self._prior_layout(scheme):
            inverse = atom.startswith("inv:")
            atom = atom[4:] if inverse else atom
            key = (atom, p)
            if key not in cache:
                cache[key] = self._evaluate_atom(table, pair, atom) ** p
            value = cache[key]
            if inverse:
                entries.append((label, None if value == 0.0 else 1.0 / value))
            else:
                entries.append((label, value))
        return entries


# Global instance
descriptor_service = DescriptorService()
