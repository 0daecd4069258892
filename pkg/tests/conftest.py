import numpy as np
import pytest

from gridsynth.features import build_labeled_table
from gridsynth.ingest import group_and_standardize, synth_sample_dataset
from gridsynth.tariff import default_schedule


@pytest.fixture(scope="session")
def schedule():
    return default_schedule()


@pytest.fixture(scope="session")
def small_table(schedule):
    """80 households x 14 days; quick enough for most module tests."""
    readings, _ = synth_sample_dataset(7, 80, 14)
    series, _ = group_and_standardize(readings)
    table, model = build_labeled_table(series, schedule)
    return table, model


@pytest.fixture(scope="session")
def bundled_table(schedule):
    """The 200-household, 28-day sample the acceptance criteria run on."""
    readings, _ = synth_sample_dataset(7, 200, 28)
    series, _ = group_and_standardize(readings)
    table, model = build_labeled_table(series, schedule)
    return table, model


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
