"""
MlpDescriptor class holding the student network parameters.
"""
from typing import List, Sequence, Tuple

import numpy as np

Layer = Tuple[np.ndarray, np.ndarray]


class MlpDescriptor:
    """
    Multilayer perceptron mapping a local histogram to an embedding.

    Each layer is a ``(weight, bias)`` pair with weight shape ``(out, in)``.
    Hidden layers use rectified-linear activations; the output layer is affine,
    optionally followed by L2 normalization.
    """

    def __init__(self, layers: Sequence[Layer], normalize_output: bool = True):
        """
        Initialize the descriptor network.

        Args:
            layers: Sequence of (weight, bias) pairs, weight shaped (out, in)
            normalize_output: Project embeddings onto the unit sphere

        Raises:
            ValueError: If the layer dimensions do not chain or weights are not finite
        """
        if len(layers) == 0:
            raise ValueError("MlpDescriptor needs at least one layer")
        checked: List[Layer] = []
        previous_out = None
        for index, (weight, bias) in enumerate(layers):
            weight = np.array(weight, dtype=np.float64)
            bias = np.array(bias, dtype=np.float64).reshape(-1)
            if weight.ndim != 2:
                raise ValueError(f"Layer {index} weight must be a matrix, got shape {weight.shape}")
            if bias.shape != (weight.shape[0],):
                raise ValueError(
                    f"Layer {index} bias has shape {bias.shape}, expected ({weight.shape[0]},)")
            if previous_out is not None and weight.shape[1] != previous_out:
                raise ValueError(
                    f"Layer {index} expects {weight.shape[1]} inputs but layer {index - 1} "
                    f"emits {previous_out}")
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise ValueError(f"Layer {index} has non-finite parameters")
            previous_out = weight.shape[0]
            checked.append((weight, bias))
        self.layers = checked
        self.normalize_output = bool(normalize_output)

    @property
    def layer_dims(self) -> List[int]:
        """Chain of dimensions, e.g. [33, 64, 64, 16]."""
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def copy(self) -> 'MlpDescriptor':
        """Deep copy of all parameters."""
        return MlpDescriptor([(w.copy(), b.copy()) for w, b in self.layers], self.normalize_output)

    def flatten(self) -> np.ndarray:
        """All weights then biases per layer, concatenated in layer order."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def with_flat(self, flat: np.ndarray) -> 'MlpDescriptor':
        """Copy of this architecture with parameters taken from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.parameter_count(),):
            raise ValueError(f"Expected {self.parameter_count()} parameters, got {flat.shape}")
        layers = []
        offset = 0
        for w, b in self.layers:
            weight = flat[offset:offset + w.size].reshape(w.shape)
            offset += w.size
            bias = flat[offset:offset + b.size]
            offset += b.size
            layers.append((weight, bias))
        return MlpDescriptor(layers, self.normalize_output)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpDescriptor):
            return NotImplemented
        if self.normalize_output != other.normalize_output or self.layer_dims != other.layer_dims:
            return False
        return all(np.array_equal(w1, w2) and np.array_equal(b1, b2)
                   for (w1, b1), (w2, b2) in zip(self.layers, other.layers))

    def __repr__(self) -> str:
        dims = ' -> '.join(str(d) for d in self.layer_dims)
        return f"MlpDescriptor({dims}, normalize_output={self.normalize_output})"
