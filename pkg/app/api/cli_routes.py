"""
Pipeline command routes
Subcommands gen-data, krr-scan, krr-fit, sparsify and report, registered on one router
"""

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd

from app.models.config import RunConfig
from app.models.domain import Configuration, DataSet, ErrorReport, SparseFormula
from app.models.errors import FormulaHunterError, MissingArtifactError, StageError
from app.services.dataset_service import dataset_service
from app.services.elementals_service import elementals_service
from app.services.krr_service import krr_service, make_spec
from app.services.report_service import report_service
from app.services.sparsify_service import sparsify_service
from app.utils.config_loader import config_hash, output_dir

logger = logging.getLogger(__name__)

STAGE_TIMES_FILE = ".stage_times.json"
RUN_REPORT_FILE = "run_report.json"
MANIFEST_FILE = "dataset_manifest.json"


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[[RunConfig], List[Path]]


class CommandRouter:
    """Registry of pipeline subcommands"""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str):
        def register(handler: Callable[[RunConfig], List[Path]]):
            self.commands[name] = Command(name, help, handler)
            return handler

        return register

    def dispatch(self, name: str, config: RunConfig) -> List[Path]:
        """Run one subcommand and record its wall-clock time"""
        command = self.commands[name]
        started = time.perf_counter()
        artifacts = command.handler(config)
        elapsed = time.perf_counter() - started
        _record_stage_time(config, name, elapsed)
        logger.info(f"{name} finished in {elapsed:.2f}s")
        return artifacts


router = CommandRouter()


def _stage_times(config: RunConfig) -> Dict[str, float]:
    """Recorded stage seconds for the current config hash"""
    path = output_dir(config) / STAGE_TIMES_FILE
    try:
        record = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
    except json.JSONDecodeError:
        record = {}
    if record.get("config_hash") != config_hash(config):
        return {}
    return dict(record.get("stages", {}))


def _record_stage_time(config: RunConfig, name: str, seconds: float):
    """Keep the first time of each stage per config hash; a rerun leaves the file as it is"""
    times = _stage_times(config)
    if name in times:
        return
    times[name] = round(seconds, 3)
    path = output_dir(config) / STAGE_TIMES_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"config_hash": config_hash(config), "stages": times}
    path.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")


def _dataset_path(config: RunConfig, configuration: Configuration) -> Path:
    return output_dir(config) / f"dataset_{configuration.slug}.csv"


def _require(paths: List[Path]):
    missing = [p for p in paths if not p.is_file()]
    if missing:
        raise MissingArtifactError(missing)


def _load_dataset(config: RunConfig, configuration: Configuration) -> DataSet:
    path = _dataset_path(config, configuration)
    _require([path])
    return dataset_service.read_csv(path, config.scheme, configuration)


def _stage(name: str, action: Callable[[], List[Path]]) -> List[Path]:
    try:
        return action()
    except (MissingArtifactError, StageError):
        raise
    except (FormulaHunterError, ValueError, ArithmeticError, OSError) as e:
        raise StageError(name, e) from e


@router.command("gen-data", help="Generate the planted synthetic datasets")
def cmd_gen_data(config: RunConfig) -> List[Path]:
    out = output_dir(config)
    table = elementals_service.load_table(config.paths.elemental_table)
    artifacts: List[Path] = []
    datasets: Dict[str, Dict[str, object]] = {}
    manifest: Dict[str, object] = {
        "config_hash": config_hash(config),
        "ratios": list(config.dataset.ratios),
        "planted": [{"term": t.term, "coefficient": t.coefficient} for t in config.dataset.planted],
        "noise_sigma": config.dataset.noise_sigma,
        "noise_fraction": config.dataset.noise_fraction,
        "scheme": config.scheme.model_dump(mode="json"),
        "datasets": datasets,
    }

    for configuration in config.dataset.configurations:
        def build() -> List[Path]:
            external = config.dataset.external.get(configuration)
            seed = config.seeds.data + list(Configuration).index(configuration)
            if external is not None:
                ds = dataset_service.read_csv(external, config.scheme, configuration)
                source = str(external)
            else:
                model = dataset_service.planted_model(config.dataset, seed)
                ds = dataset_service.generate_synthetic(
                    table,
                    config.scheme,
                    model,
                    configuration,
                    config.dataset.ratios,
                    config.dataset.noise_fraction,
                )
                source = "synthetic"
            path = dataset_service.write_csv(ds, _dataset_path(config, configuration))
            datasets[configuration.value] = {
                "file": path.name,
                "source": source,
                "seed": seed,
                "rows": len(ds),
                "labels": list(ds.labels),
                "dropped": list(ds.dropped),
            }
            return [path]

        artifacts += _stage(f"gen-data:{configuration.slug}", build)

    manifest_path = out / MANIFEST_FILE
    report_service.write_json(manifest, manifest_path)
    return artifacts + [manifest_path]


@router.command("krr-scan", help="Grid-search kernel ridge regression per kernel family")
def cmd_krr_scan(config: RunConfig) -> List[Path]:
    krr = config.krr
    ds = _load_dataset(config, krr.configuration)
    table = elementals_service.load_table(config.paths.elemental_table)

    def scan() -> List[Path]:
        krr_ds = dataset_service.with_scheme(ds, table, krr.scheme)
        split = dataset_service.split(krr_ds, krr.split_ratio, config.seeds.split)
        scan_rows, summary_rows = [], []
        for family in krr.families:
            result = krr_service.grid_search(krr_ds, split, family, krr.grid, krr.standardize, config.threads)
            scan_rows += [trial.as_row() for trial in result.trials]
            best = result.best
            flagged, ratio = krr_service.overfit_diagnostic(best.train, best.test, krr.overfit_threshold)
            log_lambda, log_gamma, log_c = best.point
            summary_rows.append(
                {
                    "family": family,
                    "log10_lambda": log_lambda,
                    "log10_gamma": log_gamma,
                    "log10_c": log_c if log_c is not None else "",
                    **best.train.as_dict("train_"),
                    **best.test.as_dict("test_"),
                    "overfit": flagged,
                    "overfit_ratio": ratio,
                }
            )
        out = output_dir(config)
        scan_path, summary_path = out / "krr_scan.csv", out / "krr_summary.csv"
        report_service.write_rows(scan_rows, scan_path)
        report_service.write_rows(summary_rows, summary_path)
        return [scan_path, summary_path]

    return _stage("krr-scan", scan)


def _krr_hyperparameters(config: RunConfig) -> Dict[str, Dict[str, Optional[float]]]:
    """Per family: fixed hyperparameters from the config, else the scan summary"""
    chosen: Dict[str, Dict[str, Optional[float]]] = {}
    summary = output_dir(config) / "krr_summary.csv"
    frame = pd.read_csv(summary, float_precision="round_trip") if summary.is_file() else None
    for family in config.krr.families:
        fixed = config.krr.fixed.get(family)
        if fixed is not None:
            chosen[family] = fixed.model_dump()
            continue
        if frame is None:
            raise MissingArtifactError([summary])
        rows = frame[frame["family"] == family]
        if rows.empty:
            raise MissingArtifactError([f"{summary} (no row for {family})"])
        row = rows.iloc[0]
        log_c = row.get("log10_c")
        chosen[family] = {
            "log10_lambda": float(row["log10_lambda"]),
            "log10_gamma": float(row["log10_gamma"]),
            "log10_c": None if pd.isna(log_c) else float(log_c),
        }
    return chosen


@router.command("krr-fit", help="Refit the selected KRR models, write scatter data and cross-validation")
def cmd_krr_fit(config: RunConfig) -> List[Path]:
    krr = config.krr
    ds = _load_dataset(config, krr.configuration)
    hyperparameters = _krr_hyperparameters(config)
    table = elementals_service.load_table(config.paths.elemental_table)

    def fit() -> List[Path]:
        krr_ds = dataset_service.with_scheme(ds, table, krr.scheme)
        split = dataset_service.split(krr_ds, krr.split_ratio, config.seeds.split)
        out = output_dir(config)
        artifacts = []
        for family, params in hyperparameters.items():
            spec = make_spec(family, params["log10_gamma"], params["log10_c"])
            lam = 10.0 ** params["log10_lambda"]
            model = krr_service.fit(krr_ds.X[split.train], krr_ds.y[split.train], spec, lam, krr.standardize)
            rows = report_service.scatter_rows(
                krr_ds, krr_service.predict(model, krr_ds.X[split.train]), split.train, "train", family=family
            )
            rows += report_service.scatter_rows(
                krr_ds, krr_service.predict(model, krr_ds.X[split.test]), split.test, "test", family=family
            )
            folds = krr_service.cross_validate(krr_ds, krr.cv_folds, config.seeds.cv, spec, lam, krr.standardize)
            cv_rows = []
            for fold in folds:
                cv_rows.append({"family": family, "fold": fold.fold, "set": "train", **fold.train.as_dict()})
                cv_rows.append({"family": family, "fold": fold.fold, "set": "test", **fold.test.as_dict()})
            scatter_path = out / f"krr_scatter_{family}.csv"
            cv_path = out / f"krr_cv_{family}.csv"
            report_service.write_rows(rows, scatter_path)
            report_service.write_rows(cv_rows, cv_path)
            artifacts += [scatter_path, cv_path]
        return artifacts

    return _stage("krr-fit", fit)


@router.command("sparsify", help="Expand features, run the l1 path and the l0 search per configuration")
def cmd_sparsify(config: RunConfig) -> List[Path]:
    out = output_dir(config)
    artifacts: List[Path] = []
    for configuration in config.dataset.configurations:
        ds = _load_dataset(config, configuration)
        slug = configuration.slug

        def run() -> List[Path]:
            outcome = sparsify_service.run(ds, config.sparsify, config.threads)
            paths = [
                out / f"lasso_path_{slug}.csv",
                out / f"formulas_{slug}.csv",
                out / f"formulas_{slug}.txt",
                out / f"pruned_{slug}.csv",
            ]
            report_service.write_path(outcome.path, paths[0], config.sparsify.design_scaling)
            report_service.write_formulas(outcome.formulas, paths[1], paths[2], title=configuration.value)
            report_service.write_pruned(outcome.features, ds.dropped, paths[3])
            if not sparsify_service.errors_nonincreasing_check(outcome.formulas):
                logger.warning(f"{configuration.value}: training MSE rises with k")
            return paths

        artifacts += _stage(f"sparsify:{slug}", run)
    return artifacts


def read_formulas(path: Path) -> List[SparseFormula]:
    """Formulas back from a formulas_<cfg>.csv table"""
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False)
    formulas = []
    for row in frame.to_dict("records"):
        labels = [t.strip() for t in str(row["terms"]).split("|")]
        coefficients = [float(c) for c in str(row["coefficients"]).split("|")]
        formulas.append(
            SparseFormula(
                terms=tuple(zip(labels, coefficients)),
                intercept=float(row["intercept"]),
                errors=ErrorReport(float(row["mae"]), float(row["mse"]), float(row["me"])),
            )
        )
    return formulas


@router.command("report", help="Consolidate stage outputs into plot data and run_report.json")
def cmd_report(config: RunConfig) -> List[Path]:
    out = output_dir(config)
    configurations = config.dataset.configurations
    required = []
    for configuration in configurations:
        required += [_dataset_path(config, configuration), out / f"formulas_{configuration.slug}.csv"]
    _require(required)

    def report() -> List[Path]:
        artifacts: List[Path] = []
        mae_rows = []
        for configuration in configurations:
            ds = dataset_service.read_csv(_dataset_path(config, configuration), config.scheme, configuration)
            formulas = read_formulas(out / f"formulas_{configuration.slug}.csv")
            mae_rows += report_service.mae_vs_k_rows(configuration.value, formulas)
            scatter = []
            for formula in formulas:
                scatter += report_service.scatter_rows(ds, report_service.predict_formula(formula, ds), k=formula.k)
            scatter_path = out / f"l0_scatter_{configuration.slug}.csv"
            report_service.write_rows(scatter, scatter_path)
            artifacts.append(scatter_path)

        mae_path = out / "mae_vs_k.csv"
        report_service.write_rows(mae_rows, mae_path, ["configuration", "k", "mae", "mse", "me"])
        young_path = out / "young_vs_volume.csv"
        table = elementals_service.load_table(config.paths.elemental_table)
        report_service.young_vs_volume(table).to_csv(young_path, index=False, encoding="utf-8")
        artifacts = [mae_path, young_path] + artifacts
        artifacts.append(_write_run_report(config, artifacts))
        return artifacts

    return _stage("report", report)


def _write_run_report(config: RunConfig, produced: List[Path]) -> Path:
    """run_report.json, left untouched when the hash, the artifact list and the stage times are unchanged"""
    out = output_dir(config)
    path = out / RUN_REPORT_FILE
    known = {p.name for p in produced}
    for pattern in ("dataset_*.csv", MANIFEST_FILE, "krr_*.csv", "lasso_path_*.csv", "formulas_*", "pruned_*.csv"):
        known.update(p.name for p in out.glob(pattern))
    artifacts = sorted(known)
    digest = config_hash(config)
    # the report stage is timed after this file is written
    stage_seconds = {name: s for name, s in _stage_times(config).items() if name != "report"}

    if path.is_file():
        try:
            previous = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            previous = {}
        if (
            previous.get("config_hash") == digest
            and previous.get("artifacts") == artifacts
            and previous.get("stage_seconds") == stage_seconds
            and all((out / name).is_file() for name in artifacts)
        ):
            logger.info("run_report.json is current")
            return path

    report_service.write_json(
        {"config_hash": digest, "artifacts": artifacts, "stage_seconds": stage_seconds}, path
    )
    return path
