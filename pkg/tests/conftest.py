import pytest

from features.kernels.kernels import (control_kernel, inverse_kernel, observer_kernel_anticollocated,
                                      observer_kernel_collocated)

LAMBDA1, LAMBDA2 = 20.0, 10.0


@pytest.fixture(scope="session", autouse=True)
def isolated_environment(tmp_path_factory):
    root = tmp_path_factory.mktemp("env")
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("BACKSTEP_LOG_DIR", str(root / "logs"))
        mp.setenv("BACKSTEP_ENABLE_CACHE", "false")
        mp.setenv("BACKSTEP_CACHE_PATH", str(root / "kernels.db"))
        yield root


@pytest.fixture(scope="session")
def control_pair():
    """Control and inverse kernels at (20, 10) on n = 128 and n = 256."""
    return {n: (control_kernel(LAMBDA1, LAMBDA2, n), inverse_kernel(LAMBDA1, LAMBDA2, n))
            for n in (128, 256)}


@pytest.fixture(scope="session")
def control_64():
    return control_kernel(LAMBDA1, LAMBDA2, 64)


@pytest.fixture(scope="session")
def observers_64():
    return (observer_kernel_anticollocated(LAMBDA1, LAMBDA2, 64),
            observer_kernel_collocated(LAMBDA1, LAMBDA2, 64))
