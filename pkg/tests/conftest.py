import numpy as np
import pytest

from bgwf.harness import iter_degree_sequences, replicate_rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tree_weight(model, degrees) -> float:
    """Brute-force BGW weight of an ordered tree given by its degree sequence."""
    return float(np.prod(model.pmf(np.asarray(degrees))))


def enumerate_tree_law(model, n):
    """Exact conditional law over all ordered trees of size n, as {degrees: prob}."""
    weights = {}
    for seq in iter_degree_sequences(n):
        w = tree_weight(model, seq)
        if w > 0.0:
            weights[seq] = w
    total = sum(weights.values())
    return {k: v / total for k, v in weights.items()}


# Session-scoped Catalan ensemble at the acceptance-scale size.  Several
# acceptance criteria and the power-log expansion check share it, so the
# expensive sampling happens once.
ACCEPT_N = 10_001
ACCEPT_R = 10_000
ACCEPT_SEED = 20_240_811


@pytest.fixture(scope="session")
def catalan_acceptance_report():
    from bgwf.functionals import TollFunction
    from bgwf.harness import ExperimentConfig, MODE_MOMENT, run_moment
    from bgwf.offspring import catalan_model

    tolls = [
        TollFunction.power(0.0, 0.0),   # alpha'=1, beta=0  (toll 1)
        TollFunction.power(0.0, 1.0),   # alpha'=1, beta=1  (toll u)
        TollFunction.power(1.0, 0.0),   # alpha'=2, beta=0  (toll x)
        TollFunction.power(0.5, 0.0),
        TollFunction.power_log(0.5),
    ]
    cfg = ExperimentConfig(
        mode=MODE_MOMENT,
        model=catalan_model(),
        sizes=[ACCEPT_N],
        replicates=ACCEPT_R,
        tolls=tolls,
        master_seed=ACCEPT_SEED,
    )
    return run_moment(cfg)


@pytest.fixture(scope="session")
def continuum_acceptance_report():
    from bgwf.functionals import TollFunction
    from bgwf.harness import ExperimentConfig, MODE_CONTINUUM, run_continuum

    tolls = [
        TollFunction.power(0.0, 0.0),
        TollFunction.power(0.0, 1.0),
        TollFunction.power(1.0, 0.0),
    ]
    cfg = ExperimentConfig(
        mode=MODE_CONTINUUM,
        replicates=ACCEPT_R,
        kappa=0.5,
        m_grid=10_000,
        levels=1024,
        tolls=tolls,
        master_seed=ACCEPT_SEED + 1,
    )
    return run_continuum(cfg)


def rng_for(seed, j=0):
    return replicate_rng(seed, j)
