"""
Elemental property tables for FormulaHunter
Loads, validates and serves per-lanthanide properties for the two LnPO4 phases
"""

import logging
import math
from pathlib import Path
from typing import Dict, Tuple, Union

import pandas as pd

from app.models.config import DEFAULT_TABLE_PATH
from app.models.domain import ELEMENTS, PROPERTY_NAMES, Element, ElementalTable, Phase
from app.models.errors import PropertyLookupError, SchemaError, TableParseError

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("element", "phase") + PROPERTY_NAMES
POSITIVE_PROPERTIES = ("m", "R", "V", "Y")


class ElementalsService:
    """Reads and writes the elemental CSV and answers property lookups"""

    def load_table(self, path: Union[str, Path] = DEFAULT_TABLE_PATH) -> ElementalTable:
        """
        Parse and validate an elemental table

        Args:
            path: CSV with header element,phase,Z,m,R,IP2,IP3,chi,Y,Zeff,rho,V

        Returns:
            ElementalTable with every (element, phase) record present

        Row numbers in parse errors are file line numbers (the header is line 1).
        """
        path = Path(path)
        if not path.is_file():
            raise SchemaError(f"elemental table not found: {path}")

        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        frame.columns = [c.strip() for c in frame.columns]
        missing_columns = [c for c in TABLE_COLUMNS if c not in frame.columns]
        if missing_columns:
            raise SchemaError(f"missing property: {', '.join(missing_columns)}")

        values: Dict[Tuple[Element, Phase], Dict[str, float]] = {}
        for offset, record in enumerate(frame.to_dict("records")):
            line = offset + 2
            key = self._parse_key(record, line)
            if key in values:
                raise SchemaError(f"duplicate row for {key[0].value}/{key[1].value} (line {line})")
            values[key] = {name: self._parse_value(record[name], name, line) for name in PROPERTY_NAMES}

        self._check_complete(values)
        self._check_atomic_numbers(values)
        logger.info(f"Loaded elemental table {path} ({len(values)} records)")
        return ElementalTable(values)

    def write_table(self, table: ElementalTable, path: Union[str, Path]) -> Path:
        """Write a table back to CSV in canonical element/phase order"""
        rows = []
        for element in ELEMENTS:
            for phase in Phase:
                record = table.values[(element, phase)]
                rows.append({"element": element.value, "phase": phase.value, **dict(record)})
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=list(TABLE_COLUMNS)).to_csv(path, index=False, encoding="utf-8")
        return path

    def property(self, table: ElementalTable, element: Element, phase: Phase, name: str) -> float:
        """Stored value of one property; R resolves to the phase's coordination"""
        if name not in PROPERTY_NAMES:
            raise PropertyLookupError(f"unknown property '{name}', expected one of {list(PROPERTY_NAMES)}")
        return table.get(Element(element), Phase(phase), name)

    def _parse_key(self, record: Dict[str, str], line: int) -> Tuple[Element, Phase]:
        try:
            element = Element(record["element"].strip())
        except ValueError:
            raise TableParseError(f"unknown element '{record['element']}'", line) from None
        try:
            phase = Phase(record["phase"].strip())
        except ValueError:
            raise TableParseError(f"unknown phase '{record['phase']}'", line) from None
        return element, phase

    def _parse_value(self, raw: str, name: str, line: int) -> float:
        try:
            value = float(raw.strip())
        except ValueError:
            raise TableParseError(f"{name} is not a number: '{raw}'", line) from None
        if not math.isfinite(value):
            raise TableParseError(f"{name} is not finite: '{raw}'", line)
        if name in POSITIVE_PROPERTIES and value <= 0:
            raise TableParseError(f"{name} must be positive, got {value}", line)
        return value

    def _check_complete(self, values: Dict[Tuple[Element, Phase], Dict[str, float]]):
        for element in ELEMENTS:
            phases = [ph for ph in Phase if (element, ph) in values]
            if not phases:
                raise SchemaError(f"missing element: {element.value}")
            for phase in Phase:
                if phase not in phases:
                    raise SchemaError(f"missing phase for {element.value}: {phase.value}")

    def _check_atomic_numbers(self, values: Dict[Tuple[Element, Phase], Dict[str, float]]):
        for phase in Phase:
            numbers = [values[(e, phase)]["Z"] for e in ELEMENTS]
            if any(b <= a for a, b in zip(numbers, numbers[1:])):
                raise SchemaError(f"Z must increase with element order ({phase.value})")


# Global instance
elementals_service = ElementalsService()
