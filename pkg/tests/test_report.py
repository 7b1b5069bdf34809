"""
Tests for formula rendering and report tables
"""

import numpy as np
import pandas as pd

from app.api.cli_routes import read_formulas
from app.models.domain import ErrorReport, PathReport, Phase, SparseFormula
from app.services.feature_service import feature_service
from app.services.report_service import report_service


def test_render_formula():
    formula = SparseFormula((("m*(1-m)*diff(V)^2", 0.9247),), 0.0173, ErrorReport(0.1, 0.02, 0.4))
    assert report_service.render_formula(formula) == "H_E ≈ 0.9247*m*(1-m)*diff(V)^2 + 0.0173"


def test_render_negative_terms():
    formula = SparseFormula((("a", -2.0), ("b", 3.0)), -1.5, ErrorReport(0.0, 0.0, 0.0))
    assert report_service.render_formula(formula) == "H_E ≈ -2*a + 3*b - 1.5"


def test_render_table():
    formulas = [
        SparseFormula((("a", 1.0),), 0.5, ErrorReport(0.3, 0.1, 0.9)),
        SparseFormula((("a", 1.0), ("b", 2.0)), 0.5, ErrorReport(0.1, 0.02, 0.4)),
    ]
    lines = report_service.render_table(formulas, "Fused").splitlines()
    assert lines[:3] == ["Fused", "# | Functions", "1 | H_E ≈ 1*a + 0.5"]
    assert lines[3] == "  | MAE 0.3  MSE 0.1  ME 0.9"
    assert lines[4].startswith("2 | ")


def test_formula_table_reads_back(tmp_path):
    formulas = [
        SparseFormula((("m*diff(V)^2", 1.0 / 3.0),), 0.1, ErrorReport(0.3, 0.1, 0.9)),
        SparseFormula((("m*diff(V)^2", 0.1), ("diff(Y)", -2.5e-7)), -0.2, ErrorReport(0.1, 0.02, 0.4)),
    ]
    csv_path, txt_path = tmp_path / "formulas.csv", tmp_path / "formulas.txt"
    report_service.write_formulas(formulas, csv_path, txt_path, "Monazite")
    assert [f.terms for f in read_formulas(csv_path)] == [f.terms for f in formulas]
    assert [f.errors for f in read_formulas(csv_path)] == [f.errors for f in formulas]
    assert txt_path.read_text(encoding="utf-8").startswith("Monazite\n# | Functions\n")


def test_path_table_names_scaling_and_solver_status(tmp_path):
    path = PathReport(
        lambdas=(0.001, 0.006),
        active_sizes=(4, 2),
        errors=(ErrorReport(0.2, 0.05, 0.6), ErrorReport(0.3, 0.1, 0.8)),
        active_sets=((0, 1, 2, 3), (0, 2)),
        converged=(False, True),
        iterations=(10000, 37),
    )
    csv_path = tmp_path / "lasso_path.csv"
    report_service.write_path(path, csv_path, "raw")
    frame = pd.read_csv(csv_path)
    assert list(frame["converged"]) == [False, True]
    assert list(frame["iterations"]) == [10000, 37]
    assert list(frame["design_scaling"]) == ["raw", "raw"]
    assert list(frame["lambda_hat"]) == [0.001, 0.006]

def test_predict_formula_reproduces_planted_target(monazite, planted):
    formula = SparseFormula(planted.terms, 0.0, ErrorReport(0.0, 0.0, 0.0))
    np.testing.assert_allclose(report_service.predict_formula(formula, monazite), monazite.y, rtol=1e-12)


def test_pruned_table(monazite, tmp_path):
    columns = [monazite.labels.index(label) for label in ("m", "(1-m)", "inv(m)", "inv((1-m))")]
    fm = feature_service.expand(monazite.X[:, columns], [monazite.labels[i] for i in columns], max_degree=2)
    path = tmp_path / "pruned.csv"
    report_service.write_pruned(fm, monazite.dropped, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["label", "reason"]
    assert frame["reason"].iloc[0] == "undefined-reciprocal"
    assert "m*inv(m)" in set(frame["label"])


def test_scatter_rows(monazite):
    rows = report_service.scatter_rows(monazite, monazite.y[:3], [0, 1, 2], "train", family="gaussian")
    assert rows[0]["family"] == "gaussian"
    assert rows[0]["set"] == "train"
    assert rows[0]["pair"] == "La-Ce"
    assert rows[0]["y_true"] == rows[0]["y_pred"]


def test_young_vs_volume(table):
    frame = report_service.young_vs_volume(table)
    assert len(frame) == 30
    for phase in Phase:
        rows = frame[frame["phase"] == phase.value]
        slope, intercept = np.polyfit(rows["V"], rows["Y"], 1)
        np.testing.assert_allclose(rows["slope"].iloc[0], slope, rtol=1e-8)
        np.testing.assert_allclose(rows["intercept"].iloc[0], intercept, rtol=1e-8)
