import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# fixtures combined with @given are read-only models, safe to share across examples
settings.register_profile(
    "numeric",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("numeric")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_model():
    """4-state, 2-action, 1-constraint ergodic model with fixed seed."""
    from cmdp_lab.envs import EnvSpec, random_ergodic_cmdp

    return random_ergodic_cmdp(EnvSpec(n_states=4, n_actions=2, n_constraints=1, seed=7))


@pytest.fixture
def small_policy(small_model, rng):
    from cmdp_lab.policy import SoftmaxPolicy, tabular_sa_features

    x = tabular_sa_features(small_model.n_states, small_model.n_actions)
    return SoftmaxPolicy(x, rng.normal(0.0, 0.5, x.shape[2]))
