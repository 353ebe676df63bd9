import numpy as np
import pytest

from conset.core import (
    ConsiderationSet,
    Dataset,
    OptionSpace,
    build_reduced_power_set,
)
from conset.synth import CovariateSpec, GenerativeSpec

RECOVERY_BETA = np.array([
    [0.5, 1.0, -0.6],
    [-0.2, -0.5, 0.9],
    [0.1, 0.3, -0.1],
    [-0.4, -0.8, -0.2],
])


def abc():
    return OptionSpace(("a", "b", "c"))


def tiny_rps():
    """{a},{b},{c},{a,b}: the running three-option example."""
    opts = abc()
    ab = ConsiderationSet.from_labels(["a", "b"], opts)
    return build_reduced_power_set(opts, [ConsiderationSet(1), ab, ab], 2)


def recovery_spec(n=20000, seed=0, n_null=0):
    """K=4, p=3 logit with centred beta; ``n_null`` extra covariates with zero effect."""
    rps = build_reduced_power_set(OptionSpace(("a", "b", "c", "d")), [], 1)
    beta = RECOVERY_BETA - RECOVERY_BETA.mean(axis=0)
    beta = np.hstack([beta, np.zeros((4, n_null))])
    covs = [CovariateSpec(f"x{j}", p=0.5) for j in range(1, 3 + n_null)]
    return GenerativeSpec(rps, beta, covs, n, seed)


def random_dataset(rng, n, K, p):
    opts = OptionSpace(tuple(f"o{i}" for i in range(K)))
    rps = build_reduced_power_set(opts, [], 1)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = rng.integers(0, K, size=n)
    return Dataset(rps, y, X, ["(Intercept)"] + [f"z{j}" for j in range(1, p)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
