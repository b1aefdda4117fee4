"""
Tests for the student descriptor: forward pass, loss, gradient and training.
"""
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from models.errors import EmptyBatchError, TrainingDivergedError
from models.mlp_descriptor import MlpDescriptor
from models.point_cloud import PointCloud
from models.rigid_transform import RigidTransform
from models.training import LossConfig, OptimizerConfig, TrainingBatch
from services.fpfh import prepare_fragment
from services.geometry import apply_transform, compose
from services.student import (find_positives, forward, generate_training_pairs, init_weights, loss,
                              loss_and_gradient, loss_gradient, prepare_supervised_pair,
                              sample_negatives, train_student)
from tests.conftest import compact_object


def random_batch(rng, input_dim=33, n_a=30, n_b=40, anchors=6, negatives=3):
    inputs_a = rng.uniform(0.0, 1.0, size=(n_a, input_dim))
    inputs_b = rng.uniform(0.0, 1.0, size=(n_b, input_dim))
    return TrainingBatch(inputs_a, inputs_b, rng.choice(n_a, size=anchors, replace=False),
                         rng.integers(0, n_b, size=anchors), rng.integers(0, n_b, size=(anchors, negatives)))


def flat_gradient(gradients):
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in gradients])


def naive_forward(model, x):
    h = list(x)
    for index, (weight, bias) in enumerate(model.layers):
        out = []
        for row in range(weight.shape[0]):
            total = bias[row]
            for col in range(weight.shape[1]):
                total += weight[row, col] * h[col]
            out.append(max(total, 0.0) if index < len(model.layers) - 1 else total)
        h = out
    h = np.array(h)
    if model.normalize_output:
        h = h / np.sqrt(np.sum(h * h))
    return h


@pytest.fixture(scope="module")
def fragment_pair():
    """A fragment with FPFH descriptors and its exact rigid copy."""
    fragment = prepare_fragment(compact_object(seed=4), voxel=0.04, normal_k=15, radius=0.15)
    truth = RigidTransform.from_axis_angle([0.2, 1.0, 0.1], 25.0, [0.3, -0.1, 0.2])
    return fragment, apply_transform(truth, fragment), truth


class TestInitWeights:
    """Parameter initialization."""

    def test_same_seed_gives_identical_weights(self):
        assert init_weights([33, 16, 8], seed=5) == init_weights([33, 16, 8], seed=5)
        assert init_weights([33, 16, 8], seed=5) != init_weights([33, 16, 8], seed=6)

    def test_glorot_uniform_range_and_mean(self):
        model = init_weights([100, 100, 100], seed=0)
        for weight, bias in model.layers:
            bound = np.sqrt(6.0 / 200.0)
            assert np.all(np.abs(weight) < bound)
            standard_error = bound / np.sqrt(3.0) / np.sqrt(weight.size)
            assert abs(weight.mean()) < 4 * standard_error
            assert np.all(bias == 0.0)

    def test_from_model_copies(self):
        source = init_weights([33, 8, 4], seed=1)
        copy = init_weights([33, 8, 4], mode='from_model', source=source)
        assert copy == source
        copy.layers[0][0][0, 0] += 1.0
        assert copy != source

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError, match="mode"):
            init_weights([33, 8], mode='warm')
        with pytest.raises(ValueError, match="source"):
            init_weights([33, 8], mode='from_model')
        with pytest.raises(ValueError):
            init_weights([33])


class TestForward:
    """Embedding computation."""

    @pytest.mark.parametrize("normalize", [False, True])
    def test_matches_naive_oracle(self, rng, normalize):
        model = init_weights([33, 8, 4], seed=3, normalize_output=normalize)
        model.layers[0] = (model.layers[0][0], rng.normal(scale=0.1, size=8))
        x = rng.uniform(0.0, 1.0, size=(5, 33))
        batch = forward(model, x)
        for row in range(5):
            assert np.allclose(batch[row], naive_forward(model, x[row]), atol=1e-9)
        assert np.allclose(forward(model, x[0]), batch[0])

    def test_normalized_outputs_have_unit_norm(self, rng):
        model = init_weights([33, 16, 8], seed=2)
        out = forward(model, rng.uniform(0.0, 1.0, size=(50, 33)))
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)

    def test_zero_output_maps_to_fixed_unit_vector(self):
        model = MlpDescriptor([(np.zeros((3, 33)), np.zeros(3))], normalize_output=True)
        assert np.array_equal(forward(model, np.ones(33)), [1.0, 0.0, 0.0])

    def test_rejects_wrong_input_dimension(self):
        with pytest.raises(ValueError, match="dimension"):
            forward(init_weights([33, 4], seed=0), np.ones((2, 32)))


class TestLoss:
    """Contrastive + triplet objective and its gradient."""

    @pytest.mark.parametrize("normalize", [False, True])
    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_central_differences(self, seed, normalize):
        rng = np.random.default_rng(seed)
        model = init_weights([33, 8, 4], seed=seed, normalize_output=normalize)
        batch = random_batch(rng)
        cfg = LossConfig(m_p=0.05, m_n=1.2, m=0.3, lambda_p=1.0, lambda_n=0.7, lambda_triplet=1.3)
        analytic = flat_gradient(loss_gradient(model, batch, cfg))
        flat = model.flatten()
        h = 1e-5
        numeric = np.empty_like(flat)
        for k in range(flat.size):
            step = np.zeros_like(flat)
            step[k] = h
            numeric[k] = (loss(model.with_flat(flat + step), batch, cfg) -
                          loss(model.with_flat(flat - step), batch, cfg)) / (2 * h)
        # relative per coordinate, absolute below 1e-4
        assert np.all(np.abs(analytic - numeric) <= 1e-4 * np.maximum(np.abs(numeric), 1e-4))

    def test_slack_constraints_give_zero_loss_and_gradient(self):
        model = MlpDescriptor([(np.eye(4), np.zeros(4))], normalize_output=False)
        inputs_a = np.zeros((2, 4))
        inputs_b = np.array([[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0]])
        batch = TrainingBatch(inputs_a, inputs_b, [0, 1], [0, 0], [[1, 1], [1, 1]])
        value, gradients = loss_and_gradient(model, batch, LossConfig())
        assert value == 0.0
        assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in gradients)

    def test_doubling_every_weight_doubles_the_gradient(self, rng):
        model = init_weights([33, 8, 4], seed=9)
        batch = random_batch(rng)
        base = LossConfig(m_p=0.05, m_n=1.2, m=0.3)
        doubled = LossConfig(m_p=0.05, m_n=1.2, m=0.3, lambda_p=2.0, lambda_n=2.0, lambda_triplet=2.0)
        g1 = flat_gradient(loss_gradient(model, batch, base))
        g2 = flat_gradient(loss_gradient(model, batch, doubled))
        assert np.allclose(g2, 2.0 * g1, rtol=1e-14, atol=0.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_loss_is_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        assert loss(init_weights([33, 8, 4], seed=seed), random_batch(rng), LossConfig()) >= 0.0

    def test_empty_batch_is_an_error(self):
        batch = TrainingBatch(np.zeros((1, 33)), np.zeros((1, 33)), [], [], np.zeros((0, 4)))
        with pytest.raises(EmptyBatchError):
            loss(init_weights([33, 4], seed=0), batch, LossConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError, match="m_n > m_p"):
            LossConfig(m_p=1.0, m_n=0.5)
        with pytest.raises(ValueError, match="weight"):
            LossConfig(lambda_p=0.0, lambda_n=0.0, lambda_triplet=0.0)
        with pytest.raises(ValueError, match="exceeds"):
            LossConfig(m_n=2.5).check_unit_sphere()


class TestTrainingPairs:
    """Pseudo-label supervision."""

    def test_positives_match_brute_force(self, rng):
        truth = RigidTransform.from_axis_angle([0, 0, 1], 10.0, [0.05, 0.0, 0.0])
        points_a = rng.uniform(0.0, 1.0, size=(300, 3))
        points_b = truth.apply(rng.uniform(0.0, 1.0, size=(300, 3)))
        anchors, positives, moved = find_positives(points_a, points_b, truth, 0.07)
        expected_anchors, expected_positives = [], []
        for i, p in enumerate(truth.apply(points_a)):
            distance = np.linalg.norm(points_b - p, axis=1)
            j = int(np.argmin(distance))
            if distance[j] < 0.07:
                expected_anchors.append(i)
                expected_positives.append(j)
        assert anchors.tolist() == expected_anchors
        assert positives.tolist() == expected_positives
        assert np.allclose(moved, truth.apply(points_a[anchors]))

    def test_exact_copy_pairs_every_point_with_its_image(self, fragment_pair):
        fragment, copy, truth = fragment_pair
        anchors, positives, _ = find_positives(fragment.points, copy.points, truth, 0.07)
        assert anchors.tolist() == list(range(len(fragment)))
        assert positives.tolist() == list(range(len(fragment)))

    def test_label_far_off_gives_empty_batch(self, rng):
        points = rng.uniform(0.0, 0.3, size=(40, 3))
        cloud = PointCloud(points, descriptors=np.ones((40, 33)))
        wrong = RigidTransform(None, [0.7, 0.0, 0.0])
        with pytest.raises(EmptyBatchError):
            generate_training_pairs(cloud, cloud, wrong, 0.07, LossConfig(), rng)

    def test_negatives_respect_exclusion_zone(self, rng):
        points_b = rng.uniform(0.0, 1.0, size=(200, 3))
        moved = rng.uniform(0.0, 1.0, size=(50, 3))
        negatives, keep = sample_negatives(moved, points_b, 6, 0.3, rng)
        assert keep.all()
        assert negatives.shape == (50, 6)
        distance = np.linalg.norm(points_b[negatives] - moved[:, None, :], axis=2)
        assert np.all(distance >= 0.3)

    def test_anchor_without_admissible_negative_is_dropped(self):
        points_b = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [5.0, 0.0, 0.0]])
        moved = np.array([[0.0, 0.0, 0.0], [2.5, 0.0, 0.0]])
        negatives, keep = sample_negatives(moved, points_b, 2, 3.0, np.random.default_rng(0))
        assert keep.tolist() == [True, False]
        assert np.all(negatives == 2)

    def test_generated_batch_has_requested_negatives(self, fragment_pair):
        fragment, copy, truth = fragment_pair
        batch = generate_training_pairs(fragment, copy, truth, 0.07, LossConfig(negatives_per_anchor=5),
                                        np.random.default_rng(1))
        assert batch.negatives.shape == (len(batch), 5)
        assert np.array_equal(batch.anchors, batch.positives)

    def test_moving_b_with_the_label_keeps_the_batch(self, fragment_pair):
        fragment, copy, truth = fragment_pair
        motion = RigidTransform.from_axis_angle([1.0, 0.3, -0.4], 70.0, [-0.5, 0.2, 1.0])
        cfg = LossConfig(negatives_per_anchor=3)
        base = generate_training_pairs(fragment, copy, truth, 0.07, cfg, np.random.default_rng(4))
        moved = generate_training_pairs(fragment, apply_transform(motion, copy), compose(motion, truth),
                                        0.07, cfg, np.random.default_rng(4))
        assert np.array_equal(moved.anchors, base.anchors)
        assert np.array_equal(moved.positives, base.positives)
        assert np.array_equal(moved.negatives, base.negatives)

    def test_clouds_need_descriptors(self):
        cloud = PointCloud(np.zeros((3, 3)))
        with pytest.raises(ValueError, match="descriptors"):
            generate_training_pairs(cloud, cloud, RigidTransform.identity(), 0.07, LossConfig())


class TestTrainStudent:
    """Seeded SGD over supervised pairs."""

    @pytest.fixture(scope="class")
    def pairs(self, fragment_pair):
        fragment, copy, truth = fragment_pair
        return [prepare_supervised_pair(f"pair_{k}", fragment, copy, truth, 0.07) for k in range(3)]

    def test_same_seed_gives_bit_identical_weights(self, pairs):
        start = init_weights([33, 16, 8], seed=0)
        opt = OptimizerConfig(anchors_per_pair=64)
        first, _ = train_student(start, pairs, 2, LossConfig(), opt, 0.07, seed=7, iteration=1)
        second, _ = train_student(start, pairs, 2, LossConfig(), opt, 0.07, seed=7, iteration=1)
        assert first == second
        third, _ = train_student(start, pairs, 2, LossConfig(), opt, 0.07, seed=8, iteration=1)
        assert third != first

    def test_initial_model_is_untouched(self, pairs):
        start = init_weights([33, 16, 8], seed=0)
        snapshot = start.copy()
        train_student(start, pairs, 1, LossConfig(), OptimizerConfig(anchors_per_pair=32), 0.07)
        assert start == snapshot

    def test_zero_epochs_returns_a_copy(self, pairs):
        start = init_weights([33, 8], seed=0)
        model, report = train_student(start, pairs, 0, LossConfig(), OptimizerConfig(), 0.07)
        assert model == start and model is not start
        assert report.final_loss is None

    def test_exploding_loss_is_reported(self, pairs):
        start = init_weights([33, 16, 8], seed=0, normalize_output=False)
        with np.errstate(all='ignore'):
            with pytest.raises(TrainingDivergedError, match="non-finite"):
                train_student(start, pairs, 20, LossConfig(), OptimizerConfig(learning_rate=1e150), 0.07)

    def test_rejects_empty_pair_list(self):
        with pytest.raises(ValueError, match="at least one"):
            train_student(init_weights([33, 8], seed=0), [], 1, LossConfig(), OptimizerConfig(), 0.07)


def distinct_descriptor_pairs(count, points=120, seed=0):
    """Clouds with per-point random histograms, each matched by an exact rigid copy."""
    rng = np.random.default_rng(seed)
    pairs, batches = [], []
    cfg = LossConfig()
    for k in range(count):
        cloud = PointCloud(rng.uniform(0.0, 1.0, size=(points, 3)),
                           descriptors=rng.uniform(0.0, 100.0, size=(points, 33)))
        truth = RigidTransform.from_axis_angle(rng.normal(size=3), rng.uniform(5.0, 60.0), rng.normal(size=3))
        copy = apply_transform(truth, cloud)
        pairs.append(prepare_supervised_pair(f"pair_{k:02d}", cloud, copy, truth, 0.07))
        batches.append(generate_training_pairs(cloud, copy, truth, 0.07, cfg, rng))
    return pairs, batches


def test_loss_falls_below_a_tenth_of_its_start():
    pairs, batches = distinct_descriptor_pairs(20)
    start = init_weights([33, 32, 16], seed=0)
    model, report = train_student(start, pairs, 50, LossConfig(), OptimizerConfig(learning_rate=0.02), 0.07)
    assert len(report.epoch_losses) == 50
    assert report.consumed_pair_ids == [f"pair_{k:02d}" for k in range(20)]
    initial = np.mean([loss(start, batch, LossConfig()) for batch in batches])
    final = np.mean([loss(model, batch, LossConfig()) for batch in batches])
    assert final < 0.1 * initial
    assert report.epoch_losses[-1] < report.epoch_losses[0]
