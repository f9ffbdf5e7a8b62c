import numpy as np
import pytest

from aloe.errors import InvalidWeightsError
from aloe.streams import DiscreteSampler, RandomStream, discrete_draw

SEED = 20240611


def test_same_key_reproduces_bitwise():
    a = RandomStream(SEED, 3).generator().random(1000)
    b = RandomStream(SEED, 3).generator().random(1000)
    assert np.array_equal(a, b)
    za = RandomStream(SEED, 3).generator().standard_normal(1000)
    zb = RandomStream(SEED, 3).generator().standard_normal(1000)
    assert np.array_equal(za, zb)


def test_distinct_stream_ids_are_uncorrelated():
    n = 200_000
    a = RandomStream(SEED, 0).generator().random(n)
    b = RandomStream(SEED, 1).generator().random(n)
    assert not np.array_equal(a[:100], b[:100])
    # correlation of independent uniforms is O(1/sqrt(n))
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 5.0 / np.sqrt(n)
    # means match the uniform law to 4 sigma
    for sample in (a, b):
        assert abs(sample.mean() - 0.5) < 4.0 * np.sqrt(1.0 / 12.0 / n)


def test_block_generators_independent_of_main_stream():
    stream = RandomStream(SEED, 5)
    main = stream.generator().random(100)
    block0 = stream.block_generator(0).random(100)
    block1 = stream.block_generator(1).random(100)
    assert not np.array_equal(main, block0)
    assert not np.array_equal(block0, block1)
    again = stream.block_generator(1).random(100)
    assert np.array_equal(block1, again)


class TestDiscreteSampler:
    def test_degenerate_weight_always_drawn(self):
        sampler = DiscreteSampler([1.0, 0.0, 0.0])
        rng = RandomStream(SEED).generator()
        assert all(sampler.draw(rng) == 0 for _ in range(100))

    def test_fair_coin_frequency(self):
        sampler = DiscreteSampler([1.0, 1.0])
        draws = sampler.draw_array(RandomStream(SEED, 7).generator(), 100_000)
        assert abs(np.mean(draws == 1) - 0.5) < 0.01

    def test_weighted_frequencies_within_multinomial_noise(self):
        weights = np.array([1.0, 2.0, 3.0])
        expected = weights / weights.sum()
        n = 100_000
        draws = DiscreteSampler(weights).draw_array(
            RandomStream(SEED, 8).generator(), n
        )
        freq = np.bincount(draws, minlength=3) / n
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(freq - expected) < 4 * sigma)

    def test_zero_weights_never_drawn(self):
        weights = np.array([0.0, 1.0, 0.0, 2.0, 0.0])
        draws = DiscreteSampler(weights).draw_array(
            RandomStream(SEED, 9).generator(), 50_000
        )
        assert set(np.unique(draws)) == {1, 3}

    def test_total_is_sum(self):
        sampler = DiscreteSampler([0.5, 1.5, 3.0])
        assert sampler.total == pytest.approx(5.0)

    @pytest.mark.parametrize(
        "weights", [[], [-1.0, 2.0], [0.0, 0.0], [np.nan, 1.0], [np.inf, 1.0]]
    )
    def test_invalid_weights_rejected(self, weights):
        with pytest.raises(InvalidWeightsError):
            DiscreteSampler(weights)

    def test_boundary_uniform_maps_in_range(self):
        # u*total rounding onto the last cumulative value must stay in range
        sampler = DiscreteSampler([1.0, 1e-30])
        idx = sampler.lookup(np.array([np.nextafter(1.0, 0.0)]))
        assert idx[0] in (0, 1)


def test_discrete_draw_uses_fresh_stream():
    sampler = DiscreteSampler([1.0, 1.0, 1.0])
    stream = RandomStream(SEED, 10)
    assert discrete_draw(sampler, stream) == discrete_draw(sampler, stream)
