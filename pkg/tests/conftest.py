import pytest

from pipeguard import evaluation, learning


@pytest.fixture(scope="session")
def suite():
    return evaluation.calibration_suite()


@pytest.fixture(scope="session")
def proposed_policy(suite):
    config = learning.TrainConfig(algorithm="DQN", episodes=3000,
                                  learning_rate=0.3, seed=0)
    return evaluation.train_mitigation_policy(suite, config)


@pytest.fixture(scope="session")
def detector_only_policy(suite):
    """Policy trained without cross-stage correlation (RLOnly arm)."""
    config = learning.TrainConfig(algorithm="DQN", episodes=3000,
                                  learning_rate=0.3, seed=0)
    return evaluation.train_mitigation_policy(suite, config, correlation=False)
