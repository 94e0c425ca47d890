import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinecurve.mask_io import CHANNEL_NAMES, SoftMask
from spinecurve.midcurve import MidCurve
from spinecurve.synth import SynthSpec, corpus_specs, generate_softmask

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def mask_from_spine(spine):
    """Six-channel mask whose spine channel is ``spine`` and the rest zero."""
    spine = np.asarray(spine, dtype=np.float64)
    channels = np.zeros((len(CHANNEL_NAMES),) + spine.shape)
    channels[CHANNEL_NAMES.index("spine")] = spine
    return SoftMask(channels)


def straight_curve(n=416, col=64.0, row_start=0):
    return MidCurve(np.arange(row_start, row_start + n), np.full(n, col))


@pytest.fixture(scope="session")
def corpus():
    """The 200-sample mixed C/S corpus used by the acceptance checks."""
    specs = corpus_specs(200, (1.0, 45.0), seed=2024, noise_sigma=0.3)
    return [generate_softmask(s) for s in specs]


@pytest.fixture
def straight_mask():
    return generate_softmask(SynthSpec("straight"))[0]


def linear_data(n=1000, slope=30.0, seed=100):
    rng = np.random.default_rng(seed)
    x = 1.0 + rng.uniform(0.0, 1.0, n)
    return x, slope * (x - 1.0)


@pytest.fixture(scope="session")
def linear_model():
    """Regressor fitted to y = 30 (kappa - 1) on kappa in [1, 2]."""
    from spinecurve.laplace_regressor import TrainConfig, train

    model, log = train(linear_data(), TrainConfig(seed=0, patience=100))
    return model, log


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; shown in the terminal summary."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
