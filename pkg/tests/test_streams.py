import numpy as np
import pytest

from model.errors import DomainError
from model.laws import WeightLaw
from sim.occupancy import _height_one
from sim.streams import chunk_bounds, derive_seed, map_replicates, replicate_rng, replicate_seed


class TestReplicateRng:
    def test_deterministic(self):
        a = replicate_rng(11, 3, 1).random(5)
        b = replicate_rng(11, 3, 1).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        base = replicate_rng(11, 3).random(5)
        assert not np.array_equal(base, replicate_rng(11, 4).random(5))
        assert not np.array_equal(base, replicate_rng(12, 3).random(5))
        assert not np.array_equal(replicate_rng(11, 3, 0).random(5), replicate_rng(11, 3, 1).random(5))

    def test_spawn_key(self):
        ss = replicate_seed(5, 2, 1)
        assert ss.entropy == 5 and ss.spawn_key == (2, 1)

    def test_negative_index(self):
        with pytest.raises(DomainError):
            replicate_seed(1, -1)
        with pytest.raises(DomainError):
            replicate_seed(1, 0, -2)


class TestDeriveSeed:
    def test_stable_and_bounded(self):
        s = derive_seed(20240611, 3)
        assert s == derive_seed(20240611, 3)
        assert 0 <= s < 2**63
        assert s != derive_seed(20240611, 4)


class TestMapReplicates:
    def test_chunk_bounds(self):
        assert chunk_bounds(10, 3) == [(0, 3), (3, 6), (6, 10)]
        assert chunk_bounds(2, 8) == [(0, 1), (1, 2)]

    def test_threads_do_not_change_results(self):
        args = (6, 200, WeightLaw.gem(1.0))
        serial = map_replicates(_height_one, 12, 99, 1, args)
        pooled = map_replicates(_height_one, 12, 99, 2, args)
        assert serial == pooled
        assert all(h is not None and h >= 1 for h in serial)

    def test_counts(self):
        assert map_replicates(_height_one, 0, 1) == []
        with pytest.raises(DomainError):
            map_replicates(_height_one, -1, 1)
