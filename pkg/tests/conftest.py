import pytest

from helpers import quick_config, small_fleet


@pytest.fixture(scope="session")
def shared_artifact():
    """One small fitted artifact reused by read-only forecast/eval tests."""
    from fleetspline.workflow import fit

    data, truth = small_fleet()
    return fit(data, quick_config()), truth
