import numpy as np
import pytest

from pulsepp.generator import GeneratorConfig, fit_transform, init_generator


@pytest.fixture(scope="session")
def weights():
    return init_generator(GeneratorConfig(), seed=0)


@pytest.fixture(scope="session")
def transform(weights):
    return fit_transform(weights, 20_000, seed=0)


@pytest.fixture(scope="session")
def small_weights():
    # k=16, 16x16 output: cheap enough for many forward passes
    return init_generator(GeneratorConfig(k=16, L=6, channels=6, mapping_depth=2), seed=3)


@pytest.fixture(scope="session")
def small_transform(small_weights):
    return fit_transform(small_weights, 10_000, seed=1)


def random_latents(weights, seed):
    cfg = weights.config
    rng = np.random.default_rng(seed)
    return rng.standard_normal((cfg.k, cfg.L)), [rng.standard_normal(d) for d in cfg.noise_dims]


def fd_rel_error(f, x, direction, h=1e-6):
    """Relative error between a central difference along ``direction`` and f's claim."""
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[crit]
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
