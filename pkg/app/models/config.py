"""
Run configuration models
One TOML file, validated section by section; every field has a default
"""

from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.domain import PROPERTY_NAMES, Configuration, KernelFamily, SchemeFamily

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
DEFAULT_TABLE_PATH = DATA_DIR / "lanthanides.csv"

# Named elemental subsets used by the restricted sparsification runs
ELEMENTAL_PRESETS: Dict[str, Tuple[str, ...]] = {
    "all": PROPERTY_NAMES,
    "no-radius": tuple(p for p in PROPERTY_NAMES if p != "R"),
    "no-volume": tuple(p for p in PROPERTY_NAMES if p != "V"),
    "volume-young": ("Y", "V"),
    "krr-27": tuple(p for p in PROPERTY_NAMES if p != "rho"),
}

# Margules-shaped two-term planted target
DEFAULT_PLANTED_TERMS = (
    ("m*(1-m)*diff(V)^2", 1.1453),
    ("diff(Y)*diff(V)*inv(mean(V)^2)", 108.1079),
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DescriptorScheme(_Section):
    """Which descriptors to build for each mixing pair"""

    family: SchemeFamily = SchemeFamily.PRIOR_KNOWLEDGE
    elementals: Tuple[str, ...] = ELEMENTAL_PRESETS["krr-27"]
    m_powers: Tuple[int, ...] = (1, 2)
    # m block reciprocals only at these powers; inv(m)^2 is already a degree-2 product
    m_inverse_powers: Tuple[int, ...] = (1,)
    v_powers: Tuple[int, ...] = (2, 3)
    r_powers: Tuple[int, ...] = (2, 3)
    include_inverses: bool = True

    @model_validator(mode="before")
    @classmethod
    def _resolve_preset(cls, data):
        if isinstance(data, dict) and "preset" in data:
            data = dict(data)
            preset = data.pop("preset")
            if preset not in ELEMENTAL_PRESETS:
                raise ValueError(
                    f"unknown elemental preset '{preset}', expected one of {sorted(ELEMENTAL_PRESETS)}"
                )
            if "elementals" in data:
                raise ValueError("give either 'preset' or 'elementals', not both")
            data["elementals"] = ELEMENTAL_PRESETS[preset]
        return data

    @field_validator("elementals")
    @classmethod
    def _check_elementals(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if not value:
            raise ValueError("elemental subset must not be empty")
        unknown = [p for p in value if p not in PROPERTY_NAMES]
        if unknown:
            raise ValueError(f"unknown elemental properties {unknown}")
        if len(set(value)) != len(value):
            raise ValueError("elemental subset lists a property twice")
        return value

    @field_validator("m_powers", "m_inverse_powers", "v_powers", "r_powers")
    @classmethod
    def _check_powers(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(p < 1 for p in value) or len(set(value)) != len(value):
            raise ValueError("powers must be distinct integers >= 1")
        return value

    @model_validator(mode="after")
    def _inverse_powers_subset(self) -> "DescriptorScheme":
        extra = sorted(set(self.m_inverse_powers) - set(self.m_powers))
        if extra:
            raise ValueError(f"m_inverse_powers {extra} are not in m_powers {list(self.m_powers)}")
        return self

    @classmethod
    def krr(cls, elementals: Tuple[str, ...] = PROPERTY_NAMES) -> "DescriptorScheme":
        return cls(family=SchemeFamily.KRR_ORIGINAL, elementals=elementals)


class PlantedTerm(_Section):
    term: str
    coefficient: float


class PathsConfig(_Section):
    elemental_table: Path = DEFAULT_TABLE_PATH
    output_dir: Optional[Path] = None

    @field_validator("elemental_table")
    @classmethod
    def _table_exists(cls, value: Path) -> Path:
        if not value.is_file():
            raise ValueError(f"elemental table not found: {value}")
        return value


class DatasetConfig(_Section):
    configurations: Tuple[Configuration, ...] = tuple(Configuration)
    ratios: Tuple[float, ...] = (0.25, 0.375, 0.5, 0.625, 0.75)
    planted: Tuple[PlantedTerm, ...] = tuple(
        PlantedTerm(term=t, coefficient=c) for t, c in DEFAULT_PLANTED_TERMS
    )
    noise_sigma: Optional[float] = Field(default=None, ge=0.0)
    noise_fraction: float = Field(default=0.01, ge=0.0)
    external: Dict[Configuration, Path] = Field(default_factory=dict)

    @field_validator("ratios")
    @classmethod
    def _check_ratios(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("at least one mixing ratio is required")
        if any(not 0.0 < r < 1.0 for r in value):
            raise ValueError("mixing ratios must lie in (0, 1)")
        if len(set(value)) != len(value):
            raise ValueError("mixing ratios must be distinct")
        return value

    @field_validator("planted")
    @classmethod
    def _check_planted(cls, value: Tuple[PlantedTerm, ...]) -> Tuple[PlantedTerm, ...]:
        if not value:
            raise ValueError("planted model needs at least one term")
        return value

    @field_validator("external")
    @classmethod
    def _external_exists(cls, value: Dict[Configuration, Path]) -> Dict[Configuration, Path]:
        missing = [str(p) for p in value.values() if not p.is_file()]
        if missing:
            raise ValueError(f"external dataset files not found: {missing}")
        return value


class GridSpec(_Section):
    """log10 ranges and step counts of the KRR hyperparameter grid"""

    log10_lambda: Tuple[float, float] = (-20.0, 6.0)
    lambda_steps: int = Field(default=21, ge=1)
    log10_gamma: Tuple[float, float] = (-8.0, 8.0)
    gamma_steps: int = Field(default=17, ge=1)
    log10_c: Tuple[float, float] = (-2.0, 2.0)
    c_steps: int = Field(default=5, ge=1)
    refinement_rounds: int = Field(default=2, ge=0)

    @field_validator("log10_lambda", "log10_gamma", "log10_c")
    @classmethod
    def _finite_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(np.isfinite(value)) or value[0] > value[1]:
            raise ValueError(f"range must be finite and ordered, got {value}")
        return value

    def axis(self, name: str) -> np.ndarray:
        """Grid points (log10) along one hyperparameter"""
        lo, hi = getattr(self, f"log10_{name}")
        steps = getattr(self, f"{name}_steps")
        if steps == 1:
            return np.array([lo])
        return np.linspace(lo, hi, steps)

    def step(self, name: str) -> float:
        lo, hi = getattr(self, f"log10_{name}")
        steps = getattr(self, f"{name}_steps")
        return 0.0 if steps == 1 else (hi - lo) / (steps - 1)


class FixedHyperparameters(_Section):
    log10_lambda: float
    log10_gamma: float
    log10_c: Optional[float] = None


KRR_FAMILIES = ("poly2", "poly3", "gaussian", "laplacian")


class KrrConfig(_Section):
    configuration: Configuration = Configuration.FUSED
    scheme: DescriptorScheme = DescriptorScheme.krr()
    families: Tuple[str, ...] = KRR_FAMILIES
    grid: GridSpec = GridSpec()
    split_ratio: float = Field(default=0.8, gt=0.0, lt=1.0)
    standardize: bool = True
    cv_folds: int = Field(default=5, ge=2)
    overfit_threshold: float = Field(default=10.0, gt=0.0)
    fixed: Dict[str, FixedHyperparameters] = Field(default_factory=dict)

    @field_validator("families")
    @classmethod
    def _check_families(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if not value:
            raise ValueError("at least one kernel family is required")
        for name in value:
            family_from_name(name)
        return value


def family_from_name(name: str) -> Tuple[KernelFamily, Optional[int]]:
    """'poly3' -> (Polynomial, 3); 'gaussian' -> (Gaussian, None)"""
    lowered = name.lower()
    if lowered.startswith("poly") and lowered[4:].isdigit() and int(lowered[4:]) >= 1:
        return KernelFamily.POLYNOMIAL, int(lowered[4:])
    for family in (KernelFamily.GAUSSIAN, KernelFamily.LAPLACIAN):
        if lowered == family.value.lower():
            return family, None
    raise ValueError(f"unknown kernel family '{name}' (use polyN, gaussian or laplacian)")


class SparsifyConfig(_Section):
    lambda_start: float = Field(default=0.001, gt=0.0)
    lambda_stop: float = Field(default=0.096, gt=0.0)
    lambda_step: float = Field(default=0.005, gt=0.0)
    max_degree: Literal[2, 3] = 3
    cap: int = Field(default=30, ge=1)
    k_max: int = Field(default=5, ge=1, le=5)
    support_guard: int = Field(default=40, ge=1)
    tol: Optional[float] = Field(default=None, gt=0.0)
    max_sweeps: int = Field(default=10000, ge=1)
    design_scaling: Literal["unit-norm", "raw"] = "unit-norm"
    warm_start: bool = True
    cache_dir: Optional[Path] = None

    @model_validator(mode="after")
    def _check_path(self) -> "SparsifyConfig":
        if self.lambda_stop < self.lambda_start:
            raise ValueError("lambda_stop must not be below lambda_start")
        return self

    def lambdas(self) -> List[float]:
        """Penalty path start:step:stop, inclusive of stop up to rounding"""
        count = int(np.floor((self.lambda_stop - self.lambda_start) / self.lambda_step + 1e-9)) + 1
        return [round(self.lambda_start + i * self.lambda_step, 12) for i in range(count)]


class SeedsConfig(_Section):
    base: int = 0

    @property
    def data(self) -> int:
        return self.base

    @property
    def split(self) -> int:
        return self.base + 1

    @property
    def cv(self) -> int:
        return self.base + 2


class RunConfig(_Section):
    paths: PathsConfig = PathsConfig()
    dataset: DatasetConfig = DatasetConfig()
    scheme: DescriptorScheme = DescriptorScheme()
    krr: KrrConfig = KrrConfig()
    sparsify: SparsifyConfig = SparsifyConfig()
    seeds: SeedsConfig = SeedsConfig()
    threads: int = Field(default=1, ge=1)

    @field_validator("scheme")
    @classmethod
    def _prior_scheme(cls, value: DescriptorScheme) -> DescriptorScheme:
        if value.family is not SchemeFamily.PRIOR_KNOWLEDGE:
            raise ValueError("the dataset scheme must be of the PriorKnowledge family")
        return value
