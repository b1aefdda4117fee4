"""
Tests for the teacher-student loop controller, run directories and dataset directories.
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from controllers.sgp_controller import SgpController
from models.dataset import PairDataset, PairSpec, RegistrationPair, SceneSpec, ground_truth_audit
from models.mlp_descriptor import MlpDescriptor
from models.point_cloud import PointCloud
from models.pseudo_label import PseudoLabel
from models.rigid_transform import RigidTransform
from models.sgp_config import SgpConfig
from services.datagen import difficulty_preset, make_dataset
from services.dataset_io import load_dataset, write_dataset
from services.run_directory import RunDirectory
from services.student import init_weights
from services.verifier import read_ground_truth

SMALL = SgpConfig(iterations=2, ransac_max_iterations=2000, icp_max_iterations=10, epochs_first=2,
                  epochs_rest=1, hidden_dims=(16,), embedding_dim=8, anchors_per_pair=64,
                  negatives_per_anchor=2, seed=3)


@pytest.fixture(scope='module')
def dataset():
    scene_spec, pair_spec = difficulty_preset('easy')
    return make_dataset(3, 2, replace(scene_spec, points_per_scene=1200), pair_spec, seed=5)


def run(config, data, run_directory=None):
    return SgpController(config, run_directory).run_sgp(data)


class TestLoopStructure:
    """Shape of a run and the self-supervision contract."""

    def test_single_iteration(self, dataset):
        result = run(replace(SMALL, iterations=1), dataset)
        assert result.bootstrap_metrics.iteration == 0
        assert [m.iteration for m in result.metrics] == [1]
        assert len(result.labels) == len(dataset.train)
        assert [label.pair_id for label in result.labels] == [p.pair_id for p in dataset.train]
        assert len(result.consumed_pair_ids) == 1
        assert result.metrics[0].test_recall is not None
        assert result.best_iteration == 1

    def test_training_reads_no_ground_truth(self, dataset):
        run(SMALL, dataset)
        assert ground_truth_audit.violation_count == 0
        scopes = {scope for scope, _ in ground_truth_audit.reads}
        assert scopes <= {'plir', 'recall', 'evaluate'}

    def test_student_only_reads_verified_pairs(self, dataset):
        result = run(replace(SMALL, iterations=1), dataset)
        verified = {label.pair_id for label in result.bootstrap_labels if label.verified}
        assert set(result.consumed_pair_ids[0]) <= verified

    def test_verifier_off_keeps_every_label(self, dataset):
        result = run(replace(SMALL, verify_label=False), dataset)
        assert result.bootstrap_metrics.plsr == 100.0
        assert all(m.plsr == 100.0 for m in result.metrics)

    def test_tiny_fragment_gets_no_model_label(self, dataset):
        tiny = RegistrationPair('train_tiny', PointCloud(np.zeros((5, 3))), dataset.train[0].cloud_b)
        data = PairDataset([tiny] + dataset.train[1:], dataset.test)
        result = run(replace(SMALL, iterations=1, verify_label=False), data)
        assert not result.bootstrap_labels[0].has_model
        assert not result.labels[0].has_model
        assert 'train_tiny' not in result.consumed_pair_ids[0]
        assert [m.iteration for m in result.metrics] == [1]

    def test_ratio_test_without_targets_gets_no_model_label(self, dataset):
        spread = PointCloud(np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]]))
        pair = RegistrationPair('spread', dataset.train[0].cloud_a, spread)
        label = SgpController(replace(SMALL, ratio_test=0.8)).register(pair)
        assert not label.has_model
        assert label.overlap_ratio == 0.0 and not label.verified

    def test_rejects_empty_training_split(self, dataset):
        with pytest.raises(ValueError, match="nonempty"):
            run(SMALL, PairDataset([], dataset.test))


class TestDeterminism:
    """Same seed, same run."""

    def test_repeat_runs_match(self, dataset):
        first = run(SMALL, dataset)
        second = run(SMALL, dataset)
        assert first.metrics == second.metrics
        assert first.model == second.model

    def test_workers_do_not_change_results(self, dataset):
        serial = run(SMALL, dataset)
        threaded = run(replace(SMALL, workers=2), dataset)
        assert serial.metrics == threaded.metrics
        assert serial.model == threaded.model
        for left, right in zip(serial.labels, threaded.labels):
            assert left.transform.to_row() == right.transform.to_row()

    def test_first_round_is_the_same_for_retrain_and_finetune(self, dataset):
        finetune = run(replace(SMALL, iterations=1), dataset)
        retrain = run(replace(SMALL, iterations=1, retrain=True), dataset)
        assert finetune.model == retrain.model


class TestRelabel:
    """Stable-label bookkeeping."""

    def test_skipped_labels_are_carried_over(self, dataset):
        controller = SgpController(SMALL)
        frozen = PseudoLabel(dataset.train[0].pair_id,
                             RigidTransform.from_axis_angle([0, 0, 1], 3.0, [0.1, 0.0, 0.0]),
                             0.5, 0.6, stable_count=4, skip=True)
        model = init_weights(SMALL.layer_dims, seed=0)
        updated = controller._relabel([frozen], dataset.train[:1], model, 1)
        assert updated[0] is not frozen
        assert updated[0].transform.to_row() == frozen.transform.to_row()
        assert (updated[0].skip, updated[0].stable_count) == (True, 4)

    def test_unchanged_label_counts_as_stable(self, dataset):
        controller = SgpController(replace(SMALL, skip_inlier_rate=1.0))
        model = init_weights(SMALL.layer_dims, seed=0)
        first = controller._relabel([PseudoLabel.no_model(p.pair_id) for p in dataset.train[:2]],
                                    dataset.train[:2], model, 1)
        assert all(label.stable_count == 0 for label in first)
        # same iteration index, same sampling stream, same labels
        second = controller._relabel(first, dataset.train[:2], model, 1)
        for before, after in zip(first, second):
            if before.has_model:
                assert after.stable_count == 1
                assert after.transform.to_row() == before.transform.to_row()

    def test_high_inlier_rate_freezes_label(self, dataset):
        controller = SgpController(replace(SMALL, skip_inlier_rate=0.0))
        model = init_weights(SMALL.layer_dims, seed=0)
        labels = controller._relabel([PseudoLabel.no_model(p.pair_id) for p in dataset.train[:2]],
                                     dataset.train[:2], model, 1)
        assert all(label.skip for label in labels if label.has_model and label.inlier_rate > 0)


class TestEvaluate:
    """Registration recall."""

    def test_rejects_empty_pair_set(self):
        with pytest.raises(ValueError, match="empty"):
            SgpController(SMALL).evaluate(None, [])

    def test_identity_student_matches_fpfh(self, dataset):
        controller = SgpController(SMALL)
        identity = MlpDescriptor([(np.eye(33), np.zeros(33))], normalize_output=False)
        baseline = controller.evaluate(None, dataset.test)
        passthrough = controller.evaluate(identity, dataset.test)
        # input scaling may flip near-tied matches on at most one pair
        assert abs(baseline - passthrough) <= 100.0 / len(dataset.test)

    def test_noiseless_full_overlap_is_perfect(self):
        scene_spec = SceneSpec()
        pair_spec = PairSpec(overlap=1.0, noise_sigma=0.0, clutter_fraction=0.0)
        data = make_dataset(0, 2, scene_spec, pair_spec, seed=2)
        assert SgpController(SMALL).evaluate(None, data.test) == 100.0


class TestValidation:
    """Best-model selection on a validation split."""

    def test_best_iteration_has_highest_validation_recall(self):
        scene_spec, pair_spec = difficulty_preset('easy')
        data = make_dataset(2, 1, replace(scene_spec, points_per_scene=1000), pair_spec, seed=8,
                            n_validation=2)
        result = run(SMALL, data)
        recalls = result.validation_recalls
        assert len(recalls) == SMALL.iterations
        best = max(recalls)
        assert recalls[result.best_iteration - 1] == best
        assert all(value < best for value in recalls[result.best_iteration:])


class TestRunDirectory:
    """Artifacts written during a run."""

    def test_artifacts_match_result(self, dataset, tmp_path):
        directory = RunDirectory(str(tmp_path / "run"))
        result = run(SMALL, dataset, directory)
        assert directory.config() == SMALL
        assert directory.metrics() == result.metrics
        assert directory.bootstrap_metrics() == result.bootstrap_metrics
        assert directory.checkpoints.iterations() == [1, 2]
        assert directory.latest_model() == result.model
        labels = directory.labels()
        assert [label.pair_id for label in labels] == [label.pair_id for label in result.labels]
        assert [label.skip for label in labels] == [label.skip for label in result.labels]
        assert len(directory.labels(bootstrap=True)) == len(dataset.train)

    def test_missing_bootstrap_metrics(self, tmp_path):
        assert RunDirectory(str(tmp_path)).bootstrap_metrics() is None
        assert RunDirectory(str(tmp_path)).latest_model() is None


class TestDatasetDirectory:
    """Dataset directories on disk."""

    def test_round_trip(self, dataset, tmp_path):
        manifests = write_dataset(dataset, str(tmp_path))
        assert [os.path.basename(m) for m in manifests] == ['train_manifest.csv', 'test_manifest.csv']
        loaded = load_dataset(str(tmp_path))
        assert [p.pair_id for p in loaded.train] == [p.pair_id for p in dataset.train]
        assert loaded.validation == []
        for left, right in zip(dataset.all_pairs(), loaded.all_pairs()):
            assert np.array_equal(left.cloud_a.points, right.cloud_a.points)
            assert left.achieved_overlap == right.achieved_overlap
        for left, right in zip(read_ground_truth(dataset.all_pairs(), 'evaluate'),
                               read_ground_truth(loaded.all_pairs(), 'evaluate')):
            assert left.to_row() == right.to_row()
        assert ground_truth_audit.violation_count == 0

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="train_manifest.csv"):
            load_dataset(str(tmp_path))


@pytest.mark.slow
class TestAcceptance:
    """Scaled-down trend runs on the calibrated benchmark difficulty."""

    @pytest.fixture(scope='class')
    def benchmark(self):
        scene_spec, pair_spec = difficulty_preset('default')
        return {seed: make_dataset(200, 50, scene_spec, pair_spec, seed=seed, workers=4) for seed in range(3)}

    @pytest.mark.parametrize("seed", range(3))
    def test_student_improves_test_recall(self, benchmark, seed):
        result = run(SgpConfig(iterations=5, seed=seed, workers=4), benchmark[seed])
        assert result.metrics[4].test_recall >= result.bootstrap_metrics.test_recall + 5.0
        assert result.metrics[4].plsr >= result.metrics[0].plsr

    @pytest.mark.parametrize("seed", range(3))
    def test_non_robust_teacher_degrades(self, benchmark, seed):
        result = run(SgpConfig(iterations=5, seed=seed, workers=4, teacher='horn_direct'), benchmark[seed])
        assert result.metrics[4].train_recall < result.metrics[0].train_recall

    def test_verifier_off_stays_close(self, benchmark):
        on = run(SgpConfig(iterations=5, seed=0, workers=4), benchmark[0])
        off = run(SgpConfig(iterations=5, seed=0, workers=4, verify_label=False), benchmark[0])
        assert all(m.plsr == 100.0 for m in off.metrics)
        assert abs(on.metrics[-1].test_recall - off.metrics[-1].test_recall) <= 10.0
