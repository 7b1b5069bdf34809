"""
Shared fixtures for the FormulaHunter test suite
"""

import pytest

from app.models.config import DEFAULT_PLANTED_TERMS, DEFAULT_TABLE_PATH, DescriptorScheme
from app.models.domain import Configuration, PlantedModel
from app.services.dataset_service import dataset_service
from app.services.elementals_service import elementals_service


@pytest.fixture(scope="session")
def table():
    return elementals_service.load_table()


@pytest.fixture(scope="session")
def table_lines():
    """Bundled elemental CSV, one string per line (header first)"""
    return DEFAULT_TABLE_PATH.read_text(encoding="utf-8").splitlines()


@pytest.fixture
def write_lines(tmp_path):
    def write(lines, name="table.csv"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write


@pytest.fixture(scope="session")
def prior_scheme():
    return DescriptorScheme()


@pytest.fixture(scope="session")
def planted():
    return PlantedModel(DEFAULT_PLANTED_TERMS, noise_sigma=0.0)


@pytest.fixture(scope="session")
def monazite_half(table, prior_scheme, planted):
    """105 monazite pairs at m = 0.5, noiseless planted target"""
    return dataset_service.generate_synthetic(
        table, prior_scheme, planted, Configuration.MONAZITE_ONLY, ratios=(0.5,)
    )


@pytest.fixture(scope="session")
def monazite(table, prior_scheme, planted):
    """525 monazite points at the five default ratios, noiseless planted target"""
    return dataset_service.generate_synthetic(table, prior_scheme, planted, Configuration.MONAZITE_ONLY)
