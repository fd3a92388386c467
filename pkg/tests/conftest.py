import numpy as np
import pytest
from hypothesis import settings

from artifact.market import ModelParams

settings.register_profile("artifact", max_examples=40, deadline=None)
settings.load_profile("artifact")


def random_params(rng, n_agents=None, k=None, d=None, xi_scale=0.5, lam_scale=None) -> ModelParams:
    """Admissible random instance: gammas sorted so the last agent is the most risk averse."""
    n = n_agents or int(rng.integers(2, 5))
    k = k or int(rng.integers(1, 4))
    d = d or int(rng.integers(k, 5))
    gammas = np.sort(rng.uniform(0.5, 4.0, n))
    alpha = rng.normal(size=(k, d))
    alpha[:, :k] += 2.0 * np.eye(k)  # keep full row rank with margin
    B = rng.normal(size=(k, k))
    lam = B @ B.T / k + 0.2 * np.eye(k)
    return ModelParams(
        gammas=gammas,
        alpha=alpha,
        beta=rng.normal(size=k),
        xi=xi_scale * rng.normal(size=((n - 1) * d, d)),
        lambda_bar=lam,
        supply=rng.uniform(0.5, 2.0, k),
        horizon=float(rng.uniform(0.5, 1.5)),
        lambda_scale=lam_scale if lam_scale is not None else float(rng.uniform(0.05, 1.0)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_agent():
    return ModelParams(
        gammas=[1.0, 2.0],
        alpha=[[1.0, 0.3], [0.2, 0.8]],
        beta=[0.1, -0.2],
        xi=[[0.5, 0.2], [-0.1, 0.4]],
        lambda_bar=[[1.0, 0.2], [0.2, 0.5]],
        supply=[1.0, 0.5],
        lambda_scale=0.05,
    )


@pytest.fixture
def three_agent():
    return ModelParams(
        gammas=[1.0, 1.5, 3.0],
        alpha=[[1.0, 0.2, 0.1], [0.3, 0.9, -0.2]],
        beta=[0.2, 0.1],
        xi=[[0.3, -0.1, 0.2], [0.1, 0.2, 0.0], [0.0, 0.1, 0.3],
            [-0.2, 0.1, 0.1], [0.2, -0.1, 0.1], [0.1, 0.0, -0.2]],
        lambda_bar=[[0.4, 0.1], [0.1, 0.3]],
        supply=[1.0, 2.0],
        horizon=1.0,
        lambda_scale=0.2,
    )


# --- acceptance summary -------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Per-criterion list of (part, ok, detail, seconds), printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(ACCEPTANCE_KEY, None)
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(table):
        parts = table[crit]
        ok = all(p[1] for p in parts)
        secs = sum(p[3] for p in parts)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({secs:.1f} s)")
        for part, pok, detail, psecs in parts:
            terminalreporter.write_line(f"    {part}: {'PASS' if pok else 'FAIL'} [{psecs:.1f} s] {detail}")
