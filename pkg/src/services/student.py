"""
Student descriptor: a histogram-input perceptron trained with a contrastive +
triplet margin loss under pseudo-label supervision.

Forward pass, loss and analytic backpropagation are written directly in numpy.
Positives come from the pseudo-label through Euclidean nearest neighbors within
c_bar; negatives are drawn uniformly outside a 2 c_bar exclusion zone.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.errors import EmptyBatchError, TrainingDivergedError
from models.mlp_descriptor import Layer, MlpDescriptor
from models.point_cloud import PointCloud
from models.rigid_transform import RigidTransform
from models.training import LossConfig, OptimizerConfig, SupervisedPair, TrainingBatch, TrainingReport
from utils.seeding import STREAM_INIT, STREAM_NEGATIVES, STREAM_SHUFFLE, derive_rng

logger = logging.getLogger(__name__)

# FPFH bins are percentages; the network sees fractions
HISTOGRAM_SCALE = 0.01
NEGATIVE_EXCLUSION_FACTOR = 2.0
REJECTION_ROUNDS = 8


def student_inputs(histograms: np.ndarray) -> np.ndarray:
    """Scale FPFH percentages to the network's input range."""
    return np.asarray(histograms, dtype=np.float64) * HISTOGRAM_SCALE


def init_weights(dims: Sequence[int], seed: int = 0, mode: str = 'fresh',
                 source: Optional[MlpDescriptor] = None,
                 normalize_output: bool = True) -> MlpDescriptor:
    """
    Create student parameters.

    Args:
        dims: Layer dimensions, e.g. [33, 64, 64, 16]
        seed: Seed for fresh initialization
        mode: 'fresh' for Glorot-uniform weights and zero biases, 'from_model' to copy ``source``
        source: Model to copy in 'from_model' mode
        normalize_output: Output normalization flag of a fresh model

    Raises:
        ValueError: On an unknown mode, invalid dims, or missing source model
    """
    if mode == 'from_model':
        if source is None:
            raise ValueError("mode 'from_model' needs a source model")
        return source.copy()
    if mode != 'fresh':
        raise ValueError(f"Unknown initialization mode '{mode}', expected 'fresh' or 'from_model'")
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"Layer dimensions must be at least two positive sizes, got {dims}")
    rng = derive_rng(seed, STREAM_INIT)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MlpDescriptor(layers, normalize_output)


def _forward_cache(model: MlpDescriptor, inputs: np.ndarray):
    """Forward pass keeping every pre-activation for backpropagation."""
    activations = [inputs]
    pre_activations = []
    h = inputs
    last = len(model.layers) - 1
    for index, (weight, bias) in enumerate(model.layers):
        z = h @ weight.T + bias
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if index < last else z
        activations.append(h)
    output = activations[-1]
    norms = None
    degenerate = np.zeros(output.shape[0], dtype=bool)
    if model.normalize_output:
        norms = np.linalg.norm(output, axis=1)
        degenerate = norms == 0
        safe = np.where(degenerate, 1.0, norms)
        output = output / safe[:, None]
        if degenerate.any():
            output[degenerate] = 0.0
            output[degenerate, 0] = 1.0
    return output, (activations, pre_activations, norms, degenerate)


def forward(model: MlpDescriptor, histograms: np.ndarray) -> np.ndarray:
    """
    Embed input histograms.

    Args:
        model: Student network
        histograms: One input vector or an (N, input_dim) array

    Returns:
        Embedding vector or (N, output_dim) array; zero pre-normalization
        outputs map to the first unit vector

    Raises:
        ValueError: If the input dimension does not match the network
    """
    x = np.asarray(histograms, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"Expected inputs of dimension {model.input_dim}, got shape {np.shape(histograms)}")
    output, (_, _, _, degenerate) = _forward_cache(model, x)
    if degenerate.any():
        logger.debug("%d embeddings were zero before normalization", int(degenerate.sum()))
    return output[0] if single else output


def embed_descriptors(model: MlpDescriptor, fpfh: np.ndarray) -> np.ndarray:
    """Student descriptors for raw FPFH rows."""
    return forward(model, student_inputs(fpfh))


def find_positives(points_a: np.ndarray, points_b: np.ndarray, label: RigidTransform,
                   c_bar: float, tree_b: Optional[cKDTree] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Anchors of A whose label-transformed position has a B neighbor closer than ``c_bar``.

    Returns:
        (anchor indices into A, positive indices into B, moved anchor positions)
    """
    if not c_bar > 0:
        raise ValueError(f"c_bar must be positive, got {c_bar}")
    moved = label.apply(points_a)
    tree_b = cKDTree(points_b) if tree_b is None else tree_b
    distance, index = tree_b.query(moved, k=1, distance_upper_bound=c_bar)
    anchors = np.flatnonzero(distance < c_bar)
    return anchors, index[anchors].astype(np.int64), moved[anchors]


def sample_negatives(moved_anchors: np.ndarray, points_b: np.ndarray, count: int,
                     exclusion: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw ``count`` B indices per anchor uniformly among points at distance >= ``exclusion``.

    Rejection sampling first; anchors that stay unresolved are drawn exactly from
    their admissible set.

    Returns:
        (negatives (kept anchors, count), boolean mask of anchors that have any admissible point)
    """
    n, m = moved_anchors.shape[0], points_b.shape[0]
    negatives = rng.integers(0, m, size=(n, count))
    pending = np.linalg.norm(points_b[negatives] - moved_anchors[:, None, :], axis=2) < exclusion
    for _ in range(REJECTION_ROUNDS):
        if not pending.any():
            break
        rows, cols = np.nonzero(pending)
        redraw = rng.integers(0, m, size=rows.shape[0])
        negatives[rows, cols] = redraw
        pending[rows, cols] = np.linalg.norm(points_b[redraw] - moved_anchors[rows], axis=1) < exclusion

    keep = np.ones(n, dtype=bool)
    for row in np.flatnonzero(pending.any(axis=1)):
        admissible = np.flatnonzero(np.linalg.norm(points_b - moved_anchors[row], axis=1) >= exclusion)
        if len(admissible) == 0:
            keep[row] = False
            continue
        slots = np.flatnonzero(pending[row])
        negatives[row, slots] = admissible[rng.integers(0, len(admissible), size=len(slots))]
    return negatives[keep], keep


def generate_training_pairs(cloud_a: PointCloud, cloud_b: PointCloud, label: RigidTransform,
                            c_bar: float, cfg: LossConfig,
                            rng: Optional[np.random.Generator] = None) -> TrainingBatch:
    """
    Build a training batch from a pseudo-label.

    Args:
        cloud_a: Source cloud carrying FPFH descriptors
        cloud_b: Target cloud carrying FPFH descriptors
        label: Pseudo-label transform mapping A onto B
        c_bar: Inlier residual bound in meters
        cfg: Loss settings (``negatives_per_anchor``)
        rng: Random stream for negatives

    Raises:
        ValueError: If the clouds carry no descriptors
        EmptyBatchError: If no point of A has a positive within ``c_bar``
    """
    if not (cloud_a.has_descriptors and cloud_b.has_descriptors):
        raise ValueError("Training pairs need clouds with FPFH descriptors")
    rng = np.random.default_rng(0) if rng is None else rng
    anchors, positives, moved = find_positives(cloud_a.points, cloud_b.points, label, c_bar)
    if len(anchors) == 0:
        raise EmptyBatchError(f"No positives within {c_bar} m under the pseudo-label")
    negatives, keep = sample_negatives(moved, cloud_b.points, cfg.negatives_per_anchor,
                                       NEGATIVE_EXCLUSION_FACTOR * c_bar, rng)
    if not keep.any():
        raise EmptyBatchError("No admissible negatives outside the exclusion zone")
    return TrainingBatch(student_inputs(cloud_a.descriptors), student_inputs(cloud_b.descriptors),
                         anchors[keep], positives[keep], negatives)


def _stack_inputs(batch: TrainingBatch) -> np.ndarray:
    negatives = batch.negative_inputs
    return np.concatenate([batch.anchor_inputs, batch.positive_inputs,
                           negatives.reshape(-1, negatives.shape[-1])])


def _split_embeddings(embeddings: np.ndarray, n: int, m: int):
    return embeddings[:n], embeddings[n:2 * n], embeddings[2 * n:].reshape(n, m, -1)


def _loss_terms(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray, cfg: LossConfig):
    diff_p = anchor - positive
    diff_n = anchor[:, None, :] - negative
    d_p = np.linalg.norm(diff_p, axis=1)
    d_n = np.linalg.norm(diff_n, axis=2)
    hinge_p = np.maximum(d_p - cfg.m_p, 0.0)
    hinge_n = np.maximum(cfg.m_n - d_n, 0.0)
    hinge_t = np.maximum(d_p[:, None] - d_n + cfg.m, 0.0)
    per_anchor = (cfg.lambda_p * hinge_p ** 2 + cfg.lambda_n * np.sum(hinge_n ** 2, axis=1) +
                  cfg.lambda_triplet * np.sum(hinge_t ** 2, axis=1))
    return per_anchor, (diff_p, diff_n, d_p, d_n, hinge_p, hinge_n, hinge_t)


def loss(model: MlpDescriptor, batch: TrainingBatch, cfg: LossConfig) -> float:
    """
    Mean over anchors of
    lambda_p max(0, d_p - m_p)^2 + lambda_n sum max(0, m_n - d_n)^2
    + lambda sum max(0, d_p - d_n + m)^2.

    Raises:
        EmptyBatchError: If the batch has no anchors
    """
    if len(batch) == 0:
        raise EmptyBatchError("Cannot evaluate the loss of an empty batch")
    n, m = len(batch), batch.negatives.shape[1]
    embeddings = forward(model, _stack_inputs(batch))
    per_anchor, _ = _loss_terms(*_split_embeddings(embeddings, n, m), cfg)
    return float(np.mean(per_anchor))


def _unit(diff: np.ndarray, distance: np.ndarray) -> np.ndarray:
    safe = np.where(distance > 0, distance, 1.0)
    return np.where((distance > 0)[..., None], diff / safe[..., None], 0.0)


def loss_and_gradient(model: MlpDescriptor, batch: TrainingBatch,
                      cfg: LossConfig) -> Tuple[float, List[Layer]]:
    """Loss value and its exact gradient for every (weight, bias) pair."""
    if len(batch) == 0:
        raise EmptyBatchError("Cannot evaluate the loss of an empty batch")
    n, m = len(batch), batch.negatives.shape[1]
    embeddings, (activations, pre_activations, norms, degenerate) = _forward_cache(model, _stack_inputs(batch))
    anchor, positive, negative = _split_embeddings(embeddings, n, m)
    per_anchor, (diff_p, diff_n, d_p, d_n, hinge_p, hinge_n, hinge_t) = _loss_terms(
        anchor, positive, negative, cfg)

    # derivatives of the mean loss with respect to the distances
    grad_dp = (2.0 * cfg.lambda_p * hinge_p + 2.0 * cfg.lambda_triplet * hinge_t.sum(axis=1)) / n
    grad_dn = (-2.0 * cfg.lambda_n * hinge_n - 2.0 * cfg.lambda_triplet * hinge_t) / n

    unit_p = _unit(diff_p, d_p)
    unit_n = _unit(diff_n, d_n)
    grad_anchor = grad_dp[:, None] * unit_p + np.sum(grad_dn[..., None] * unit_n, axis=1)
    grad_positive = -grad_dp[:, None] * unit_p
    grad_negative = -grad_dn[..., None] * unit_n
    grad = np.concatenate([grad_anchor, grad_positive, grad_negative.reshape(n * m, -1)])

    if model.normalize_output:
        radial = np.sum(embeddings * grad, axis=1, keepdims=True)
        safe = np.where(degenerate, 1.0, norms)[:, None]
        grad = np.where(degenerate[:, None], 0.0, (grad - embeddings * radial) / safe)

    gradients: List[Layer] = [None] * len(model.layers)
    for index in range(len(model.layers) - 1, -1, -1):
        weight, _ = model.layers[index]
        gradients[index] = (grad.T @ activations[index], grad.sum(axis=0))
        if index > 0:
            grad = (grad @ weight) * (pre_activations[index - 1] > 0)
    return float(np.mean(per_anchor)), gradients


def loss_gradient(model: MlpDescriptor, batch: TrainingBatch, cfg: LossConfig) -> List[Layer]:
    """Exact gradient of ``loss``; tight hinges contribute the zero subgradient."""
    return loss_and_gradient(model, batch, cfg)[1]


def prepare_supervised_pair(pair_id: str, cloud_a: PointCloud, cloud_b: PointCloud,
                            label: RigidTransform, c_bar: float) -> SupervisedPair:
    """
    Precompute label-induced positives for one verified pair.

    Raises:
        EmptyBatchError: If the label produces no positives
    """
    anchors, positives, moved = find_positives(cloud_a.points, cloud_b.points, label, c_bar)
    if len(anchors) == 0:
        raise EmptyBatchError(f"Pair '{pair_id}': no positives within {c_bar} m under the pseudo-label")
    return SupervisedPair(pair_id, cloud_b.points, student_inputs(cloud_a.descriptors),
                          student_inputs(cloud_b.descriptors), label, anchors, positives, moved)


def _epoch_batch(pair: SupervisedPair, loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
                 c_bar: float, rng: np.random.Generator) -> Optional[TrainingBatch]:
    chosen = np.arange(len(pair))
    if opt_cfg.anchors_per_pair is not None and len(chosen) > opt_cfg.anchors_per_pair:
        chosen = np.sort(rng.choice(len(chosen), size=opt_cfg.anchors_per_pair, replace=False))
    negatives, keep = sample_negatives(pair.moved_anchors[chosen], pair.points_b,
                                       loss_cfg.negatives_per_anchor,
                                       NEGATIVE_EXCLUSION_FACTOR * c_bar, rng)
    if not keep.any():
        return None
    chosen = chosen[keep]
    return TrainingBatch(pair.inputs_a, pair.inputs_b, pair.anchors[chosen],
                         pair.positives[chosen], negatives)


def train_student(model_init: MlpDescriptor, pairs: Sequence[SupervisedPair], epochs: int,
                  loss_cfg: LossConfig, opt_cfg: OptimizerConfig, c_bar: float,
                  seed: int = 0, iteration: int = 0) -> Tuple[MlpDescriptor, TrainingReport]:
    """
    Stochastic gradient descent with momentum, one pair's anchors per step.

    Pair order is shuffled every epoch and negatives are resampled, both from
    streams derived from (seed, iteration, epoch), so the result does not depend
    on anything but the inputs.

    Args:
        model_init: Starting parameters (left untouched)
        pairs: Verified pairs with precomputed positives
        epochs: Number of passes over ``pairs``
        loss_cfg: Margins and weights
        opt_cfg: Learning rate, momentum, anchor cap
        c_bar: Inlier bound; negatives lie at least 2 c_bar from the anchor
        seed: Master seed
        iteration: Loop iteration, part of the stream derivation

    Returns:
        Tuple of (trained model, TrainingReport)

    Raises:
        ValueError: If ``pairs`` is empty or epochs is negative
        TrainingDivergedError: If the loss becomes non-finite
    """
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    if len(pairs) == 0:
        raise ValueError("train_student needs at least one supervised pair")
    report = TrainingReport(consumed_pair_ids=[p.pair_id for p in pairs])
    model = model_init.copy()
    if epochs == 0:
        return model, report

    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.layers]
    for epoch in range(epochs):
        order = derive_rng(seed, iteration, epoch, STREAM_SHUFFLE).permutation(len(pairs))
        losses = []
        for position in order:
            rng = derive_rng(seed, iteration, epoch, int(position), STREAM_NEGATIVES)
            batch = _epoch_batch(pairs[position], loss_cfg, opt_cfg, c_bar, rng)
            if batch is None:
                continue
            value, gradients = loss_and_gradient(model, batch, loss_cfg)
            if not np.isfinite(value) or not all(np.all(np.isfinite(gw)) for gw, _ in gradients):
                raise TrainingDivergedError(
                    f"Loss became non-finite at epoch {epoch + 1} on pair '{pairs[position].pair_id}'")
            losses.append(value)
            for (weight, bias), (vel_w, vel_b), (grad_w, grad_b) in zip(model.layers, velocity, gradients):
                vel_w *= opt_cfg.momentum
                vel_w -= opt_cfg.learning_rate * grad_w
                vel_b *= opt_cfg.momentum
                vel_b -= opt_cfg.learning_rate * grad_b
                weight += vel_w
                bias += vel_b
        report.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        logger.debug("Epoch %d/%d: mean loss %.6f", epoch + 1, epochs, report.epoch_losses[-1])
    return model, report
