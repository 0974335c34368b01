import numpy as np
import pytest

from ctrfuse.core import DyadAggregate, DyadKey, LatentFactors


def random_instance(rng, n_banners=5, n_domains=4, order=2, max_views=20, offset_scale=0.3):
    """A small random factorization instance: aggregates, factors, offsets."""
    aggs = []
    for i in range(n_banners):
        for j in range(n_domains):
            if rng.random() < 0.7:
                views = int(rng.integers(1, max_views + 1))
                clicks = int(rng.integers(0, views + 1))
                aggs.append(DyadAggregate(DyadKey(i, j), clicks, views))
    if not aggs:
        aggs.append(DyadAggregate(DyadKey(0, 0), 1, 3))
    a = rng.normal(0.0, 0.5, (n_banners, order + 2))
    b = rng.normal(0.0, 0.5, (n_domains, order + 2))
    a[:, order + 1] = 1.0
    b[:, order] = 1.0
    factors = LatentFactors(order, a, b)
    offsets = {agg.key: float(rng.normal(0.0, offset_scale)) for agg in aggs}
    return aggs, factors, offsets


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
