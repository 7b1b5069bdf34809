"""
Domain types for FormulaHunter
Lanthanides, phases, mixing pairs and the value objects passed between services
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Tuple

import numpy as np

if TYPE_CHECKING:
    from app.models.config import DescriptorScheme


class Element(str, Enum):
    """The 15 lanthanides, declared in atomic-number order (57-71)"""

    La = "La"
    Ce = "Ce"
    Pr = "Pr"
    Nd = "Nd"
    Pm = "Pm"
    Sm = "Sm"
    Eu = "Eu"
    Gd = "Gd"
    Tb = "Tb"
    Dy = "Dy"
    Ho = "Ho"
    Er = "Er"
    Tm = "Tm"
    Yb = "Yb"
    Lu = "Lu"

    @property
    def order(self) -> int:
        """Position in the fixed element order (La = 0)"""
        return ELEMENTS.index(self)

    @property
    def atomic_number(self) -> int:
        return 57 + self.order


ELEMENTS: Tuple[Element, ...] = tuple(Element)


class Phase(str, Enum):
    """LnPO4 crystal phase; fixes the lanthanide coordination number"""

    MONAZITE = "Monazite"
    XENOTIME = "Xenotime"

    @property
    def coordination(self) -> int:
        return 9 if self is Phase.MONAZITE else 8


class Configuration(str, Enum):
    """Which phases a dataset draws its points from"""

    MONAZITE_ONLY = "MonaziteOnly"
    XENOTIME_ONLY = "XenotimeOnly"
    FUSED = "Fused"

    @property
    def phases(self) -> Tuple[Phase, ...]:
        if self is Configuration.MONAZITE_ONLY:
            return (Phase.MONAZITE,)
        if self is Configuration.XENOTIME_ONLY:
            return (Phase.XENOTIME,)
        return (Phase.MONAZITE, Phase.XENOTIME)

    @property
    def slug(self) -> str:
        """Short name used in artifact file names"""
        return {
            Configuration.MONAZITE_ONLY: "monazite",
            Configuration.XENOTIME_ONLY: "xenotime",
            Configuration.FUSED: "fused",
        }[self]


class SchemeFamily(str, Enum):
    """Descriptor family: the KRR triple (x1, x2, x3) or the mean/diff family"""

    KRR_ORIGINAL = "KrrOriginal"
    PRIOR_KNOWLEDGE = "PriorKnowledge"


class KernelFamily(str, Enum):
    POLYNOMIAL = "Polynomial"
    GAUSSIAN = "Gaussian"
    LAPLACIAN = "Laplacian"


# Ten elemental properties, in table-column order
PROPERTY_NAMES: Tuple[str, ...] = ("Z", "m", "R", "IP2", "IP3", "chi", "Y", "Zeff", "rho", "V")


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ElementalTable:
    """Per-lanthanide property records keyed by (element, phase)"""

    values: Mapping[Tuple[Element, Phase], Mapping[str, float]]

    def __post_init__(self):
        frozen = {
            (Element(e), Phase(ph)): MappingProxyType({k: float(v) for k, v in record.items()})
            for (e, ph), record in self.values.items()
        }
        object.__setattr__(self, "values", MappingProxyType(frozen))

    def get(self, element: Element, phase: Phase, name: str) -> float:
        return self.values[(element, phase)][name]

    def column(self, phase: Phase, name: str) -> np.ndarray:
        """Values of one property for all elements of a phase, in element order"""
        return np.array([self.values[(e, phase)][name] for e in ELEMENTS])


@dataclass(frozen=True)
class MixPair:
    """Binary solid solution (li, lj) at mixing ratio m in one phase

    Construction canonicalizes the orientation so li precedes lj: a pair
    given as (lj, li, 1-m) becomes (li, lj, m). m is rounded to 12 decimals
    so that the swap round-trips bit-exactly.
    """

    li: Element
    lj: Element
    m: float
    phase: Phase

    def __post_init__(self):
        li, lj, phase = Element(self.li), Element(self.lj), Phase(self.phase)
        m = float(self.m)
        if li == lj:
            raise ValueError(f"mixing pair needs two different elements, got {li.value} twice")
        if not 0.0 < m < 1.0:
            raise ValueError(f"mixing ratio must lie in (0, 1), got {m}")
        if li.order > lj.order:
            li, lj, m = lj, li, 1.0 - m
        object.__setattr__(self, "li", li)
        object.__setattr__(self, "lj", lj)
        object.__setattr__(self, "m", round(m, 12))
        object.__setattr__(self, "phase", phase)

    @property
    def key(self) -> str:
        return f"{self.li.value}-{self.lj.value}"


@dataclass(frozen=True, eq=False)
class DescriptorVector:
    values: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        labels = tuple(self.labels)
        if values.ndim != 1 or len(values) != len(labels):
            raise ValueError(f"{len(values)} values for {len(labels)} labels")
        if not np.all(np.isfinite(values)):
            bad = [labels[i] for i in np.flatnonzero(~np.isfinite(values))]
            raise ValueError(f"non-finite descriptor values: {bad}")
        if len(set(labels)) != len(labels):
            raise ValueError("descriptor labels must be unique")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DescriptorVector):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.values, other.values)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.labels, self.values.tolist()))


@dataclass
class BuildReport:
    """Labels skipped while building descriptors (reciprocal of an exact zero)"""

    dropped: List[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class DataSet:
    """Labeled points sharing one descriptor schema

    Point i is (pairs[i], X[i], y[i]); X holds one row per pair (N x d).
    """

    pairs: Tuple[MixPair, ...]
    X: np.ndarray
    y: np.ndarray
    labels: Tuple[str, ...]
    configuration: Configuration
    scheme: "DescriptorScheme"
    dropped: Tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float)
        if X.shape != (len(self.pairs), len(self.labels)) or y.shape != (len(self.pairs),):
            raise ValueError(
                f"dataset shape mismatch: X {X.shape}, y {y.shape}, "
                f"{len(self.pairs)} pairs, {len(self.labels)} labels"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset targets must be finite")
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Train/test partition of dataset row indices"""

    train: np.ndarray
    test: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        train = np.array(self.train, dtype=int)
        test = np.array(self.test, dtype=int)
        if np.intersect1d(train, test).size:
            raise ValueError("train and test indices overlap")
        object.__setattr__(self, "train", _readonly(train))
        object.__setattr__(self, "test", _readonly(test))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitPlan):
            return NotImplemented
        return (
            np.array_equal(self.train, other.train)
            and np.array_equal(self.test, other.test)
            and self.seed == other.seed
        )


@dataclass(frozen=True)
class PlantedModel:
    """Closed-form target y = sum(coefficient * term) + noise

    Terms are '*'-joined products of scheme labels. noise_sigma None means
    1% of the noiseless target range.
    """

    terms: Tuple[Tuple[str, float], ...]
    noise_sigma: Optional[float] = 0.0
    seed: int = 0

    def __post_init__(self):
        terms = tuple((str(t), float(c)) for t, c in self.terms)
        if not terms:
            raise ValueError("planted model needs at least one term")
        if not all(math.isfinite(c) for _, c in terms):
            raise ValueError("planted coefficients must be finite")
        if self.noise_sigma is not None and not self.noise_sigma >= 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "terms", terms)

    def __add__(self, other: "PlantedModel") -> "PlantedModel":
        return PlantedModel(self.terms + other.terms, self.noise_sigma, self.seed)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters; c and degree are polynomial-only"""

    family: KernelFamily
    gamma: float
    degree: Optional[int] = None
    c: Optional[float] = None

    def __post_init__(self):
        family = KernelFamily(self.family)
        object.__setattr__(self, "family", family)
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be a finite positive number, got {self.gamma}")
        if family is KernelFamily.POLYNOMIAL:
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ValueError(f"polynomial degree must be an integer >= 1, got {self.degree}")
            c = 0.0 if self.c is None else float(self.c)
            if not (math.isfinite(c) and c >= 0):
                raise ValueError(f"polynomial offset c must be >= 0, got {c}")
            object.__setattr__(self, "degree", int(self.degree))
            object.__setattr__(self, "c", c)
        elif self.c is not None or self.degree is not None:
            raise ValueError(f"{family.value} kernel takes neither c nor degree")

    @property
    def name(self) -> str:
        if self.family is KernelFamily.POLYNOMIAL:
            return f"poly{self.degree}"
        return self.family.value.lower()


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    spec: KernelSpec

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class ErrorReport:
    """MAE and ME in kJ/mol, MSE in kJ^2/mol^2"""

    mae: float
    mse: float
    me: float

    def as_dict(self, prefix: str = "") -> Dict[str, float]:
        return {f"{prefix}mae": self.mae, f"{prefix}mse": self.mse, f"{prefix}me": self.me}


@dataclass(frozen=True, eq=False)
class KrrModel:
    alpha: np.ndarray
    spec: KernelSpec
    lam: float
    X_train: np.ndarray
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.alpha) != len(self.X_train):
            raise ValueError("alpha and training set differ in length")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("non-finite KRR coefficients")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Candidate-function matrix (column-major) with one product label per column

    factors[j] lists the base-column indices multiplied into column j.
    """

    values: np.ndarray
    labels: Tuple[str, ...]
    factors: Tuple[Tuple[int, ...], ...]
    means: np.ndarray
    stds: np.ndarray
    base_labels: Tuple[str, ...] = ()
    pruned: Tuple[Tuple[str, str], ...] = ()
    tier_counts: Tuple[int, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True, eq=False)
class StandardTransform:
    """Per-column centering and scaling used to standardize a FeatureMatrix"""

    means: np.ndarray
    scales: np.ndarray


@dataclass(frozen=True, eq=False)
class LassoResult:
    gamma: np.ndarray
    intercept: float
    active: np.ndarray
    lambda_hat: float
    iterations: int
    converged: bool
    objective: float
    objective_history: Tuple[float, ...] = ()


@dataclass(frozen=True)
class PathReport:
    """Active-set size, full-data errors and solver status at each path penalty

    converged and iterations default to "converged, 0 sweeps" when not given.
    """

    lambdas: Tuple[float, ...]
    active_sizes: Tuple[int, ...]
    errors: Tuple[ErrorReport, ...]
    active_sets: Tuple[Tuple[int, ...], ...]
    converged: Tuple[bool, ...] = ()
    iterations: Tuple[int, ...] = ()

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("path penalties must be strictly increasing")
        n = len(self.lambdas)
        if not self.converged:
            object.__setattr__(self, "converged", (True,) * n)
        if not self.iterations:
            object.__setattr__(self, "iterations", (0,) * n)
        columns = (self.active_sizes, self.errors, self.active_sets, self.converged, self.iterations)
        if any(len(column) != n for column in columns):
            raise ValueError(f"path columns disagree in length with {n} penalties")

    def __len__(self) -> int:
        return len(self.lambdas)


@dataclass(frozen=True)
class SparseFormula:
    """k-term formula on the raw feature scale, with in-sample errors"""

    terms: Tuple[Tuple[str, float], ...]
    intercept: float
    errors: ErrorReport
    columns: Tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def l0_norm(self) -> int:
        return sum(1 for _, c in self.terms if c != 0.0)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for label, _ in self.terms)
