import numpy as np
import pytest
from scipy import stats

from kmf.noise import NoiseStream, StreamTag


def test_normals_shape(noise):
    assert noise.normals(0, 5, 2, n_replicas=3).shape == (3, 5, 2)


def test_same_address_same_value(noise):
    first = noise.normals(17, 10, 2, replica_start=4, n_replicas=2)
    second = NoiseStream(noise.master_seed).normals(17, 10, 2, replica_start=4, n_replicas=2)
    np.testing.assert_array_equal(first, second)


def test_replica_batches_read_disjoint_addresses(noise):
    together = noise.normals(3, 7, 3, replica_start=0, n_replicas=5)
    for replica in range(5):
        alone = noise.normals(3, 7, 3, replica_start=replica, n_replicas=1)
        np.testing.assert_array_equal(together[replica], alone[0])


def test_unaligned_start_matches_block_read(noise):
    np.testing.assert_array_equal(noise.words(StreamTag.BROWNIAN, 2, 3, 6, replica=7),
                                  noise.words(StreamTag.BROWNIAN, 2, 0, 9, replica=7)[3:])
    words = noise.words(StreamTag.BROWNIAN, 2, 0, 16)
    np.testing.assert_array_equal(noise.words(StreamTag.BROWNIAN, 2, 5, 7), words[5:12])


def test_steps_tags_and_seeds_are_independent(noise):
    base = noise.normals(0, 64, 1)
    assert not np.array_equal(base, noise.normals(1, 64, 1))
    assert not np.array_equal(base, noise.normals(0, 64, 1, tag=StreamTag.INITIAL))
    assert not np.array_equal(base, NoiseStream(noise.master_seed + 1).normals(0, 64, 1))


def test_uniforms_stay_in_open_interval(noise):
    values = noise.uniforms(StreamTag.BROWNIAN, 0, 0, 100000)
    assert values.min() > 0.0
    assert values.max() < 1.0


def test_normals_are_standard(noise):
    sample = noise.normals(0, 200000, 1).ravel()
    assert abs(sample.mean()) < 0.01
    assert sample.std() == pytest.approx(1.0, abs=0.01)
    assert stats.kstest(sample, 'norm').pvalue > 1e-4


def test_silent_stream_is_zero():
    silent = NoiseStream(1, silent=True)
    np.testing.assert_array_equal(silent.normals(4, 3, 2, n_replicas=2), np.zeros((2, 3, 2)))


def test_address_does_not_depend_on_particle_count(noise):
    small = noise.normals(0, 64, 1, replica_start=1)
    large = noise.normals(0, 128, 1, replica_start=0, n_replicas=2)
    # replica 1, particle 0 and replica 0, particle 64 are different addresses
    assert small[0, 0, 0] != large[0, 64, 0]
    np.testing.assert_array_equal(large[1, :64], small[0])
    assert not np.any(np.isin(large[0, 64:], small[0]))


def test_replica_lanes_do_not_overlap(noise):
    lanes = noise.normals(5, 256, 2, n_replicas=4).reshape(4, -1)
    for i in range(4):
        for j in range(i + 1, 4):
            assert not np.any(np.isin(lanes[i], lanes[j]))
            assert abs(np.corrcoef(lanes[i], lanes[j])[0, 1]) < 0.2
