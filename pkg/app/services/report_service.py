"""
Reporting for FormulaHunter
Formula rendering and the CSV/JSON artifacts every pipeline stage writes
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.models.domain import (
    DataSet,
    ELEMENTS,
    ElementalTable,
    FeatureMatrix,
    PathReport,
    Phase,
    SparseFormula,
)
from app.services.dataset_service import dataset_service

logger = logging.getLogger(__name__)

TARGET_NAME = "H_E"


def _number(value: float) -> str:
    return f"{value:.6g}"


class ReportService:
    """Renders formulas and writes plot-ready tables"""

    def render_formula(self, formula: SparseFormula) -> str:
        """'H_E ≈ 1.1453*m*(1-m)*diff(V)^2 + 0.0429'"""
        parts: List[str] = []
        for label, coefficient in formula.terms:
            text = f"{_number(abs(coefficient))}*{label}"
            if not parts:
                parts.append(f"-{text}" if coefficient < 0 else text)
            else:
                parts.append(("- " if coefficient < 0 else "+ ") + text)
        b = formula.intercept
        parts.append(("- " if b < 0 else "+ ") + _number(abs(b)))
        return f"{TARGET_NAME} ≈ " + " ".join(parts)

    def render_table(self, formulas: Sequence[SparseFormula], title: str = "") -> str:
        """Plain-text formula table: one line per k followed by its error row"""
        lines = [title] if title else []
        lines.append("# | Functions")
        for formula in formulas:
            lines.append(f"{formula.k} | {self.render_formula(formula)}")
            e = formula.errors
            lines.append(f"  | MAE {_number(e.mae)}  MSE {_number(e.mse)}  ME {_number(e.me)}")
        return "\n".join(lines) + "\n"

    def predict_formula(self, formula: SparseFormula, ds: DataSet) -> np.ndarray:
        """Evaluate a formula on a dataset through its product labels"""
        y = np.full(len(ds), formula.intercept)
        for label, coefficient in formula.terms:
            y = y + coefficient * dataset_service.term_values(label, ds)
        return y

    def write_formulas(self, formulas: Sequence[SparseFormula], csv_path: Path, txt_path: Path, title: str = ""):
        rows = [
            {
                "k": f.k,
                "formula": self.render_formula(f),
                "terms": " | ".join(label for label in f.labels),
                "coefficients": " | ".join(repr(c) for _, c in f.terms),
                "intercept": f.intercept,
                **f.errors.as_dict(),
            }
            for f in formulas
        ]
        self._write_csv(rows, csv_path, ["k", "formula", "terms", "coefficients", "intercept", "mae", "mse", "me"])
        txt_path.write_text(self.render_table(formulas, title), encoding="utf-8")

    def write_path(self, path: PathReport, csv_path: Path, design_scaling: str):
        """One row per penalty; design_scaling names the design the lambda_hat values apply to"""
        rows = [
            {
                "lambda_hat": lam,
                "active_size": size,
                "converged": converged,
                "iterations": sweeps,
                **errors.as_dict(),
                "design_scaling": design_scaling,
            }
            for lam, size, converged, sweeps, errors in zip(
                path.lambdas, path.active_sizes, path.converged, path.iterations, path.errors
            )
        ]
        columns = ["lambda_hat", "active_size", "converged", "iterations", "mae", "mse", "me", "design_scaling"]
        self._write_csv(rows, csv_path, columns)

    def write_pruned(self, fm: FeatureMatrix, dropped: Iterable[str], csv_path: Path):
        """Candidate functions removed by expand plus reciprocals dropped from the descriptors"""
        rows = [{"label": label, "reason": "undefined-reciprocal"} for label in dropped]
        rows += [{"label": label, "reason": reason} for label, reason in fm.pruned]
        self._write_csv(rows, csv_path, ["label", "reason"])

    def mae_vs_k_rows(self, configuration: str, formulas: Sequence[SparseFormula]) -> List[Dict[str, object]]:
        return [{"configuration": configuration, "k": f.k, **f.errors.as_dict()} for f in formulas]

    def scatter_rows(
        self, ds: DataSet, y_pred: np.ndarray, indices: Optional[Sequence[int]] = None, subset: str = "all", **extra
    ) -> List[Dict[str, object]]:
        """(y_true, y_pred) rows with pair provenance"""
        idx = range(len(ds)) if indices is None else indices
        rows = []
        for position, i in enumerate(idx):
            pair = ds.pairs[i]
            rows.append(
                {
                    **extra,
                    "set": subset,
                    "pair": pair.key,
                    "phase": pair.phase.value,
                    "m": pair.m,
                    "y_true": float(ds.y[i]),
                    "y_pred": float(y_pred[position]),
                }
            )
        return rows

    def young_vs_volume(self, table: ElementalTable) -> pd.DataFrame:
        """Per-phase (element, V, Y) with the least-squares line Y = slope * V + intercept"""
        rows = []
        for phase in Phase:
            V = table.column(phase, "V")
            Y = table.column(phase, "Y")
            design = np.column_stack([V, np.ones_like(V)])
            (slope, intercept), *_ = np.linalg.lstsq(design, Y, rcond=None)
            for element, v, y in zip(ELEMENTS, V, Y):
                rows.append(
                    {
                        "phase": phase.value,
                        "element": element.value,
                        "V": v,
                        "Y": y,
                        "Y_fit": slope * v + intercept,
                        "slope": slope,
                        "intercept": intercept,
                    }
                )
        return pd.DataFrame(rows)

    def write_rows(self, rows: List[Dict[str, object]], csv_path: Path, columns: Optional[Sequence[str]] = None):
        self._write_csv(rows, csv_path, columns)

    def write_json(self, payload: Dict[str, object], path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def _write_csv(self, rows: List[Dict[str, object]], path: Union[str, Path], columns: Optional[Sequence[str]] = None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=list(columns) if columns else None)
        frame.to_csv(path, index=False, encoding="utf-8")
        logger.debug(f"Wrote {len(frame)} rows to {path}")


# Global instance
report_service = ReportService()
