"""
SGP Controller for the registration toolkit.

This module provides the SgpController class that runs the teacher-student
loop: FPFH bootstrap labeling, overlap verification, student training on the
verified labels, relabeling with the student's descriptors, and evaluation.
Ground truth is only read through the verifier's evaluation scopes, always
from the calling thread.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy.spatial import cKDTree

from models.dataset import PairDataset, RegistrationPair
from models.errors import EmptyBatchError, NoModelError
from models.mlp_descriptor import MlpDescriptor
from models.point_cloud import PointCloud
from models.pseudo_label import LoopMetrics, PseudoLabel
from models.sgp_config import SgpConfig
from models.sgp_state import SgpResult, SgpState
from models.training import SupervisedPair, TrainingReport
from services.fpfh import isolated_mask, prepare_fragment
from services.geometry import transforms_close
from services.matching import putative_correspondences
from services.run_directory import RunDirectory
from services.student import embed_descriptors, init_weights, prepare_supervised_pair, train_student
from services.teacher import estimate_transform
from services.verifier import (check_plir_expectation, label_estimates, overlap_ratio, plir, plsr,
                               read_ground_truth, recall, verify_labels)
from utils.seeding import STREAM_EVALUATE, STREAM_RANSAC, derive_rng

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

# split codes keep evaluation streams of different splits apart
EVAL_SPLIT_TRAIN = 0
EVAL_SPLIT_TEST = 1
EVAL_SPLIT_VALIDATION = 2


@dataclass
class PreparedPair:
    """Downsampled fragments with normals and FPFH, plus the search tree of B."""
    pair_id: str
    cloud_a: PointCloud
    cloud_b: PointCloud
    isolated_a: np.ndarray
    isolated_b: np.ndarray
    tree_b: cKDTree


class SgpController:
    """
    Orchestrates the teacher-student loop.

    Handles:
    - fragment preparation (voxel grid, normals, FPFH), cached per pair id
    - labeling a pair with FPFH or a student model
    - bootstrap labeling, the loop itself and recall evaluation
    - writing run artifacts when a RunDirectory is attached
    """

    def __init__(self, config: SgpConfig, run_directory: Optional[RunDirectory] = None):
        """
        Initialize the controller.

        Args:
            config: Loop hyperparameters
            run_directory: Optional destination for checkpoints, labels and metrics
        """
        self.config = config
        self.run_directory = run_directory
        self._prepared: Dict[str, PreparedPair] = {}
        self._lock = threading.Lock()

    def _map(self, function: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Ordered map, threaded when more than one worker is configured."""
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                return list(executor.map(function, items))
        return [function(item) for item in items]

    def prepare_pair(self, pair: RegistrationPair) -> PreparedPair:
        """Downsample both fragments and attach normals and FPFH (computed once per pair)."""
        with self._lock:
            cached = self._prepared.get(pair.pair_id)
        if cached is not None:
            return cached
        cfg = self.config
        cloud_a = prepare_fragment(pair.cloud_a, cfg.voxel_size, cfg.normal_k, cfg.effective_fpfh_radius)
        cloud_b = prepare_fragment(pair.cloud_b, cfg.voxel_size, cfg.normal_k, cfg.effective_fpfh_radius)
        prepared = PreparedPair(pair.pair_id, cloud_a, cloud_b,
                                isolated_mask(cloud_a.descriptors), isolated_mask(cloud_b.descriptors),
                                cKDTree(cloud_b.points))
        with self._lock:
            self._prepared[pair.pair_id] = prepared
        return prepared

    def _descriptors(self, prepared: PreparedPair,
                     model: Optional[MlpDescriptor]) -> Tuple[np.ndarray, np.ndarray]:
        if model is None:
            return prepared.cloud_a.descriptors, prepared.cloud_b.descriptors
        return (embed_descriptors(model, prepared.cloud_a.descriptors),
                embed_descriptors(model, prepared.cloud_b.descriptors))

    def label_pair(self, pair: RegistrationPair, model: Optional[MlpDescriptor],
                   rng: np.random.Generator) -> PseudoLabel:
        """
        Register one pair with the teacher.

        Args:
            pair: Pair to register
            model: Student network, or None for raw FPFH descriptors
            rng: RANSAC sampling stream

        Returns:
            PseudoLabel with inlier and overlap ratios; a no-model label when the teacher fails
        """
        cfg = self.config
        try:
            prepared = self.prepare_pair(pair)
            desc_a, desc_b = self._descriptors(prepared, model)
            corrs = putative_correspondences(desc_a, desc_b, mutual=cfg.mutual_filter, zeta=cfg.ratio_test,
                                             exclude_a=prepared.isolated_a, exclude_b=prepared.isolated_b)
            result = estimate_transform(corrs, prepared.cloud_a, prepared.cloud_b, cfg.ransac,
                                        teacher=cfg.teacher, icp_max_iterations=cfg.icp_max_iterations,
                                        icp_threshold=cfg.effective_icp_threshold, rng=rng)
        except NoModelError as e:
            logger.warning("Pair '%s': no model (%s)", pair.pair_id, e)
            return PseudoLabel.no_model(pair.pair_id)
        ratio = overlap_ratio(result.transform, prepared.cloud_a, prepared.cloud_b,
                              cfg.inlier_threshold, prepared.tree_b)
        return PseudoLabel(pair.pair_id, result.transform, result.inlier_rate, ratio)

    def _label_all(self, pairs: Sequence[RegistrationPair], model: Optional[MlpDescriptor],
                   iteration: int) -> List[PseudoLabel]:
        seed = self.config.seed

        def label(job):
            index, pair = job
            return self.label_pair(pair, model, derive_rng(seed, iteration, index, STREAM_RANSAC))

        return self._map(label, list(enumerate(pairs)))

    def bootstrap(self, pairs: Sequence[RegistrationPair]) -> List[PseudoLabel]:
        """
        Label every pair with FPFH + mutual matching + RANSAC + ICP.

        Labels start with stable_count 0 and skip false; pairs the teacher
        cannot register get a no-model label that is never verified.
        """
        labels = self._label_all(pairs, None, 0)
        failed = sum(1 for label in labels if not label.has_model)
        logger.info("Bootstrap labeled %d pairs (%d without a model)", len(labels), failed)
        return labels

    def evaluate(self, model: Optional[MlpDescriptor], pairs: Sequence[RegistrationPair],
                 iteration: int = 0, split_code: int = EVAL_SPLIT_TEST) -> float:
        """
        Registration recall of ``model`` (None for FPFH) over ``pairs``.

        Raises:
            ValueError: If ``pairs`` is empty
        """
        if len(pairs) == 0:
            raise ValueError("Cannot evaluate on an empty pair set")
        seed = self.config.seed

        def estimate(job):
            index, pair = job
            rng = derive_rng(seed, iteration, split_code, index, STREAM_EVALUATE)
            return self.label_pair(pair, model, rng)

        labels = self._map(estimate, list(enumerate(pairs)))
        truths = read_ground_truth(pairs, 'evaluate')
        return recall(label_estimates(labels), truths,
                      self.config.success_rotation_deg, self.config.success_translation)

    def _plir(self, survivors: List[int], labels: List[PseudoLabel],
              pairs: Sequence[RegistrationPair]) -> Optional[float]:
        if not survivors or not all(pairs[i].has_ground_truth for i in survivors):
            return None
        truths = read_ground_truth([pairs[i] for i in survivors], 'plir')
        # plir indexes labels and truths alike
        subset = [labels[i] for i in survivors]
        return plir(list(range(len(subset))), subset, truths,
                    self.config.success_rotation_deg, self.config.success_translation)

    def _train_recall(self, labels: List[PseudoLabel], pairs: Sequence[RegistrationPair]) -> Optional[float]:
        if not all(pair.has_ground_truth for pair in pairs):
            return None
        truths = read_ground_truth(pairs, 'recall')
        return recall(label_estimates(labels), truths,
                      self.config.success_rotation_deg, self.config.success_translation)

    def _test_recall(self, model: Optional[MlpDescriptor], pairs: Sequence[RegistrationPair],
                     iteration: int, split_code: int = EVAL_SPLIT_TEST) -> Optional[float]:
        if not pairs or not all(pair.has_ground_truth for pair in pairs):
            return None
        return self.evaluate(model, pairs, iteration, split_code)

    def _supervised_pairs(self, survivors: List[int], labels: List[PseudoLabel],
                          pairs: Sequence[RegistrationPair]) -> List[SupervisedPair]:
        supervised = []
        for i in survivors:
            # verification off lets no-model labels through
            if not labels[i].has_model:
                continue
            prepared = self.prepare_pair(pairs[i])
            try:
                supervised.append(prepare_supervised_pair(labels[i].pair_id, prepared.cloud_a,
                                                          prepared.cloud_b, labels[i].transform,
                                                          self.config.inlier_threshold))
            except EmptyBatchError as e:
                logger.warning("%s", e)
        return supervised

    def _relabel(self, previous: List[PseudoLabel], pairs: Sequence[RegistrationPair],
                 model: MlpDescriptor, iteration: int) -> List[PseudoLabel]:
        """Teacher pass with the student's descriptors; skipped labels are carried over unchanged."""
        cfg = self.config
        active = [i for i, label in enumerate(previous) if not label.skip]

        def label(i):
            return self.label_pair(pairs[i], model, derive_rng(cfg.seed, iteration, i, STREAM_RANSAC))

        fresh = dict(zip(active, self._map(label, active)))
        updated = []
        for i, old in enumerate(previous):
            if old.skip:
                updated.append(old.copy())
                continue
            new = fresh[i]
            unchanged = (old.has_model and new.has_model and
                         transforms_close(new.transform, old.transform,
                                          cfg.stable_rotation_deg, cfg.stable_translation))
            new.stable_count = old.stable_count + 1 if unchanged else 0
            new.skip = (new.stable_count >= cfg.skip_stable_after or
                        (new.has_model and new.inlier_rate > cfg.skip_inlier_rate))
            updated.append(new)
        return updated

    def run_sgp(self, dataset: PairDataset) -> SgpResult:
        """
        Run the loop for ``config.iterations`` rounds on ``dataset.train``.

        Metrics of iteration t: plsr and plir describe the verified set the
        student trained on, train_recall the labels produced at t, test_recall
        the student of t on ``dataset.test``. With a validation split the
        returned model is the one with the highest validation recall (ties go
        to the later iteration).

        Raises:
            ValueError: If the training split is empty
        """
        cfg = self.config
        pairs = dataset.train
        if not pairs:
            raise ValueError("run_sgp needs a nonempty training split")
        if self.run_directory is not None:
            self.run_directory.create(cfg)

        labels = self.bootstrap(pairs)
        bootstrap_labels = [label.copy() for label in labels]
        survivors = verify_labels(bootstrap_labels, cfg.eta_for(1), cfg.verify_label)
        bootstrap_metrics = LoopMetrics(0, plsr(survivors, len(pairs)),
                                        self._plir(survivors, bootstrap_labels, pairs),
                                        self._train_recall(bootstrap_labels, pairs),
                                        self._test_recall(None, dataset.test, 0))
        logger.info("Bootstrap: %r", bootstrap_metrics)
        if self.run_directory is not None:
            self.run_directory.record_bootstrap(bootstrap_labels, bootstrap_metrics)

        fresh_model = init_weights(cfg.layer_dims, seed=cfg.seed, normalize_output=cfg.normalize_output)
        state = SgpState(0, fresh_model, labels)
        result = SgpResult(fresh_model, labels, [], bootstrap_labels, bootstrap_metrics, 0)
        best_recall = None
        plir_history: Dict[str, int] = {}

        for iteration in range(1, cfg.iterations + 1):
            survivors = verify_labels(state.labels, cfg.eta_for(iteration), cfg.verify_label)
            plsr_value = plsr(survivors, len(pairs))
            plir_value = self._plir(survivors, state.labels, pairs)

            model, report = self._student_step(state, survivors, pairs, fresh_model, iteration)
            allowed = {state.labels[i].pair_id for i in survivors}
            consumed = report.consumed_pair_ids if report is not None else []
            if not set(consumed) <= allowed:
                raise RuntimeError(f"Student consumed unverified pairs at iteration {iteration}")

            labels = self._relabel(state.labels, pairs, model, iteration)
            # flags reflect the threshold the next round filters with
            verify_labels(labels, cfg.eta_for(iteration + 1), cfg.verify_label)
            train_recall = self._train_recall(labels, pairs)
            metrics = LoopMetrics(iteration, plsr_value, plir_value, train_recall,
                                  self._test_recall(model, dataset.test, iteration))
            check_plir_expectation(plir_history, plir_value, train_recall)
            state = SgpState(iteration, model, labels, state.metrics + [metrics])

            result.metrics.append(metrics)
            result.consumed_pair_ids.append(list(consumed))
            result.reports.append(report)
            self._log_iteration(state, report, len(survivors))
            if self.run_directory is not None:
                self.run_directory.record_iteration(iteration, model, labels, metrics)

            if dataset.validation:
                value = self.evaluate(model, dataset.validation, iteration, EVAL_SPLIT_VALIDATION)
                result.validation_recalls.append(value)
                if best_recall is None or value >= best_recall:
                    best_recall = value
                    result.model = model
                    result.best_iteration = iteration

        if not dataset.validation:
            result.model = state.model
            result.best_iteration = state.iteration
        result.labels = state.labels
        return result

    def _student_step(self, state: SgpState, survivors: List[int], pairs: Sequence[RegistrationPair],
                      fresh_model: MlpDescriptor,
                      iteration: int) -> Tuple[MlpDescriptor, Optional[TrainingReport]]:
        """Train on the verified labels; an empty verified set keeps the previous model."""
        cfg = self.config
        supervised = self._supervised_pairs(survivors, state.labels, pairs)
        if not supervised:
            logger.warning("Iteration %d: no verified pair yields supervision, keeping the previous model",
                           iteration)
            return state.model, None
        start = fresh_model if cfg.retrain else state.model
        model, report = train_student(start, supervised, cfg.epochs_for(iteration), cfg.loss, cfg.optimizer,
                                      cfg.inlier_threshold, seed=cfg.seed, iteration=iteration)
        consumed = set(report.consumed_pair_ids)
        report.skipped_pair_ids = [state.labels[i].pair_id for i in survivors
                                   if state.labels[i].pair_id not in consumed]
        return model, report

    def _log_iteration(self, state: SgpState, report: Optional[TrainingReport], verified: int) -> None:
        loss = report.final_loss if report is not None else None
        logger.info("Iteration %d: %r, verified %d, skipped labels %d, final loss %s",
                    state.iteration, state.metrics[-1], verified, state.skipped_count,
                    'n/a' if loss is None else f"{loss:.6f}")
        if report is not None:
            logger.debug("Iteration %d consumed %s", state.iteration, ', '.join(report.consumed_pair_ids))

    def register(self, pair: RegistrationPair, model: Optional[MlpDescriptor] = None) -> PseudoLabel:
        """Register a single pair (FPFH unless ``model`` is given)."""
        return self.label_pair(pair, model, derive_rng(self.config.seed, 0, 0, STREAM_RANSAC))
