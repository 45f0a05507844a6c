import math

import numpy as np
import pytest

from kmf.dynamics import CoupledPair, InitialLaw, advance_coupled, linear_difference_oracle
from kmf.errors import InvalidStateError, NotPositiveDefiniteError, TransportError
from kmf.noise import StreamTag
from kmf.rates import QForm
from kmf.transport import (
    GroundMetric,
    PointCloud,
    coupled_qdistance,
    second_moment,
    w2_bruteforce,
    w2_entropic,
    w2_exact,
)


def random_cloud(rng, n, dim=1, scale=1.0):
    return PointCloud(scale * rng.standard_normal((n, 2 * dim)))


def test_cloud_rejects_odd_width():
    with pytest.raises(InvalidStateError):
        PointCloud(np.zeros((3, 3)))


def test_qform_cost_is_q_of_difference(rng):
    qform = QForm(2.0, 1.5)
    metric = GroundMetric.from_qform(qform)
    p, q = rng.standard_normal(4), rng.standard_normal(4)
    diff = p - q
    assert metric.cost(p, q) == pytest.approx(float(qform(diff[:2], diff[2:])))


def test_qform_metric_needs_positive_definite_form():
    with pytest.raises(NotPositiveDefiniteError):
        GroundMetric.from_qform(QForm(0.5, 1.0))


def test_exact_matches_bruteforce_oracle(rng):
    metrics = [GroundMetric.euclidean(), GroundMetric.from_qform(QForm(2.0, 1.0))]
    for _ in range(200):
        n = int(rng.integers(2, 7))
        dim = int(rng.integers(1, 3))
        a, b = random_cloud(rng, n, dim), random_cloud(rng, n, dim)
        metric = metrics[int(rng.integers(0, 2))]
        distance, plan = w2_exact(a, b, metric)
        assert distance == pytest.approx(w2_bruteforce(a, b, metric), abs=1e-10)
        assert sorted(plan.permutation) == list(range(n))


def test_translation_gives_shift_length(rng):
    a = random_cloud(rng, 30, dim=2)
    shift = np.array([0.3, -0.4, 0.0, 0.0])
    distance, plan = w2_exact(a, a.translated(shift))
    assert distance == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_array_equal(plan.permutation, np.arange(30))


def test_identical_clouds_have_zero_distance(rng):
    a = random_cloud(rng, 20)
    distance, _ = w2_exact(a, a)
    assert distance == 0.0


@pytest.mark.parametrize('metric', [GroundMetric.euclidean(), GroundMetric.from_qform(QForm(2.0, 1.0))])
def test_exact_is_a_metric(rng, metric):
    for _ in range(20):
        n = int(rng.integers(2, 65))
        dim = int(rng.integers(1, 3))
        a, b, c = (random_cloud(rng, n, dim, scale) for scale in (1.0, 2.0, 0.5))
        ab, _ = w2_exact(a, b, metric)
        ba, _ = w2_exact(b, a, metric)
        bc, _ = w2_exact(b, c, metric)
        ac, _ = w2_exact(a, c, metric)
        assert ab == pytest.approx(ba, abs=1e-10)
        assert ac <= ab + bc + 1e-8
        assert ab > 0.0


@pytest.mark.parametrize('b, beta', [(2.0, 1.0), (1.5, 3.0), (4.0, 0.5)])
def test_qform_distance_is_sandwiched_by_euclidean(rng, b, beta):
    qform = QForm(b, beta)
    lam_min, lam_max = qform.eigenvalues
    for _ in range(10):
        a, c = random_cloud(rng, 24, dim=2), random_cloud(rng, 24, dim=2, scale=1.5)
        euclidean, _ = w2_exact(a, c)
        weighted, _ = w2_exact(a, c, GroundMetric.from_qform(qform))
        assert lam_min * euclidean ** 2 <= weighted ** 2 * (1 + 1e-10)
        assert weighted ** 2 <= lam_max * euclidean ** 2 * (1 + 1e-10)


def test_exact_rejects_unequal_sizes(rng):
    with pytest.raises(TransportError):
        w2_exact(random_cloud(rng, 3), random_cloud(rng, 4))


def test_exact_respects_cap(rng):
    with pytest.raises(TransportError):
        w2_exact(random_cloud(rng, 5), random_cloud(rng, 5), cap=4)


def test_bruteforce_is_limited(rng):
    with pytest.raises(TransportError):
        w2_bruteforce(random_cloud(rng, 9), random_cloud(rng, 9))


def test_entropic_on_identical_clouds_stays_in_envelope(rng):
    a = random_cloud(rng, 16)
    for reg_eps in (1.0, 0.1, 0.01):
        distance, plan = w2_entropic(a, a, reg_eps=reg_eps)
        assert plan.converged
        assert distance <= math.sqrt(2.0 * reg_eps * math.log(a.n)) + 1e-9


def test_entropic_approaches_exact(rng):
    a, b = random_cloud(rng, 64), random_cloud(rng, 64, scale=1.5)
    exact, _ = w2_exact(a, b)
    estimates = [w2_entropic(a, b, reg_eps=eps)[0] for eps in (1.0, 0.1, 0.01)]
    assert estimates[0] >= estimates[1] >= estimates[2] - 1e-6
    assert estimates[2] >= exact - 1e-3
    assert estimates[2] == pytest.approx(exact, rel=0.02)


def test_entropic_reports_non_convergence(rng, caplog):
    a, b = random_cloud(rng, 10), random_cloud(rng, 10)
    _, plan = w2_entropic(a, b, reg_eps=0.01, max_iter=1)
    assert not plan.converged
    assert plan.iterations == 1
    assert 'did not converge' in caplog.text


def test_entropic_rejects_bad_regularization(rng):
    with pytest.raises(TransportError):
        w2_entropic(random_cloud(rng, 3), random_cloud(rng, 3), reg_eps=0.0)


def test_coupled_qdistance_matches_oracle(free_field, noise):
    qform = QForm(2.0, 1.0)
    a = InitialLaw('dirac', 1.0, 0.0).sample(noise, 4, 1, tag=StreamTag.INITIAL)
    b = InitialLaw('dirac', 0.0, 0.0).sample(noise, 4, 1, tag=StreamTag.INITIAL_ALT)
    pair, _ = advance_coupled(CoupledPair(a, b), free_field, 0.01, 100, noise, qform)
    estimate = coupled_qdistance(pair, qform)
    dx, dv = linear_difference_oracle(free_field, a.X - b.X, a.V - b.V, 100, 0.01)
    assert estimate.value == pytest.approx(float(qform(dx, dv).mean()), abs=1e-10)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)
    assert estimate.n_samples == 4


def test_coupled_qdistance_dominates_exact_transport(linear_field, noise):
    qform = QForm(2.0, 1.0)
    a = InitialLaw('gaussian', 1.0, 0.0, 1.0).sample(noise, 200, 1, tag=StreamTag.INITIAL)
    b = InitialLaw('gaussian', -1.0, 0.0, 1.0).sample(noise, 200, 1, tag=StreamTag.INITIAL_ALT)
    pair, _ = advance_coupled(CoupledPair(a, b), linear_field, 0.01, 50, noise, qform)
    bound = coupled_qdistance(pair, qform).value
    distance, _ = w2_exact(PointCloud.from_state(pair.state_a), PointCloud.from_state(pair.state_b),
                           GroundMetric.from_qform(qform))
    assert bound >= distance ** 2 - 1e-9


def test_coupled_qdistance_needs_pairs():
    with pytest.raises(TransportError):
        coupled_qdistance([], QForm(2.0, 1.0))


def test_second_moment_of_standard_normals(rng):
    cloud = PointCloud(rng.standard_normal((1000000, 2)))
    assert second_moment(cloud) == pytest.approx(2.0, abs=0.01)
