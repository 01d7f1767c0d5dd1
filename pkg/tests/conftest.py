from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from emoskit.domain import EnsembleStats, TrainingSample

T0 = datetime(2017, 1, 1, tzinfo=timezone.utc)


def linear_gaussian_samples(
    n=45,
    a=2.0,
    b=1.0,
    noise_std=0.1,
    seed=0,
    predictor_std=2.0,
    spread=0.5,
    second_model="noise",
    lead=12,
):
    """Training samples with y = a + b * mean_1 + N(0, noise_std).

    Model "B" is either pure noise uncorrelated with y ("noise"), an exact
    copy of model A ("copy"), or a second noisy view of the same signal
    ("informative").
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        m1 = rng.normal(0.0, predictor_std)
        y = a + b * m1 + rng.normal(0.0, noise_std)
        if second_model == "copy":
            m2, s2 = m1, spread
        elif second_model == "informative":
            m2, s2 = m1 + rng.normal(0.0, 1.0), 0.7
        else:
            m2, s2 = rng.normal(0.0, predictor_std), 0.7
        init = T0 + timedelta(days=i)
        samples.append(
            TrainingSample(
                valid_time=init + timedelta(hours=lead),
                init_time=init,
                stats_per_model={
                    "A": EnsembleStats(mean=float(m1), std=float(spread), member_count=21),
                    "B": EnsembleStats(mean=float(m2), std=float(s2), member_count=51),
                },
                observation=float(y),
            )
        )
    return samples


@pytest.fixture
def samples_45():
    return linear_gaussian_samples()
