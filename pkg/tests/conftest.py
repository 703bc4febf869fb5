import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

# make the oracle helpers importable from test modules
sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_RESULTS: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@dataclass
class GaussianToy:
    """Conjugate-Gaussian problem with a flow trained on it.

    theta ~ N(0, sigma0^2 I), x = theta + eps with eps ~ N(0, sigma_e^2 I);
    the posterior is N(shrink * x, post_var * I) in closed form.
    """

    flow: object
    sigma0: float
    sigma_e: float

    @property
    def shrink(self) -> float:
        return self.sigma0**2 / (self.sigma0**2 + self.sigma_e**2)

    @property
    def post_var(self) -> float:
        return 1.0 / (1.0 / self.sigma0**2 + 1.0 / self.sigma_e**2)

    def draw_observation(self, rng) -> tuple[np.ndarray, np.ndarray]:
        theta = rng.normal(size=2) * self.sigma0
        x = theta + self.sigma_e * rng.normal(size=2)
        return theta, x


@pytest.fixture(scope="session")
def gaussian_toy():
    """Flow trained on the conjugate-Gaussian toy (shared; ~1 min to fit)."""
    from adexsbi.flow import CouplingFlow
    from adexsbi.nde import fit_flow

    rng = np.random.default_rng(42)
    sigma0, sigma_e = 1.0, 0.5
    n_train = 20000
    theta = rng.normal(size=(n_train, 2)) * sigma0
    x = theta + sigma_e * rng.normal(size=(n_train, 2))
    flow = CouplingFlow(dim=2, cond_dim=2, n_blocks=8, seed=7)
    fit_flow(flow, theta, x, epochs=40, batch_size=128, lr=1.5e-3, seed=7)
    return GaussianToy(flow=flow, sigma0=sigma0, sigma_e=sigma_e)


@pytest.fixture(scope="session")
def desk_pipeline(tmp_path_factory):
    """Full desk-scale pipeline (uniform set, classifier, constrained sets,
    handcrafted estimator); shared by the acceptance criteria (~2.5 min)."""
    from adexsbi.cli import main

    root = tmp_path_factory.mktemp("desk")
    stages = [
        ["generate", "--seed", "101", "--out", str(root / "initial")],
        ["train-classifier", "--dataset", str(root / "initial"),
         "--out", str(root / "clf"), "--seed", "202"],
        ["build-dataset", "--classifier", str(root / "clf"), "--seed", "303",
         "--out", str(root / "data")],
        ["train-nde", "--dataset", str(root / "data" / "train"),
         "--mode", "handcrafted", "--seed", "404", "--out", str(root / "nde")],
    ]
    for argv in stages:
        assert main(argv) == 0, f"pipeline stage failed: {argv[0]}"
    return root
