# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from ..rig.core import (ANIME_EXPR_DIM, HUMAN_EXPR_DIM, JAW_DIM,
                        ExpressionParams)
from ..rig.io import read_model, write_model
from ..runtime.utils import (ArtifactError, NonFiniteError, NumericalError,
                             as_finite_array)

logger = logging.getLogger(__name__)

INPUT_DIM = HUMAN_EXPR_DIM + JAW_DIM
DEFAULT_LAYER_SIZES = (INPUT_DIM, 256, 256, ANIME_EXPR_DIM)
LEAKY_SLOPE = 0.2
LOGIT_CLIP = 30.0
HIDDEN_ACTIVATION = 'leaky_relu_0.2'
OUTPUT_ACTIVATION = 'sigmoid'


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TranslatorModel:
    """
    The expression translation network: a fully connected stack mapping the
    53 human parameters `[psi; jaw]` to 17 anime coefficients. Hidden layers
    use a leaky rectifier with slope 0.2, the output layer a logistic
    sigmoid. `weights[l]` has shape `(layer_sizes[l+1], layer_sizes[l])`.

    Models are immutable; training produces new instances.
    """
    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("a model needs at least an input and an output "
                             "layer")
        if sizes[0] != INPUT_DIM or sizes[-1] != ANIME_EXPR_DIM:
            raise ValueError(f"layer sizes must start at {INPUT_DIM} and end "
                             f"at {ANIME_EXPR_DIM}, got {list(sizes)}")
        if min(sizes) < 1:
            raise ValueError(f"layer sizes must be positive, got {list(sizes)}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(
                sizes) - 1:
            raise ValueError(f"expected {len(sizes) - 1} weight matrices and "
                             f"bias vectors")
        weights, biases = [], []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = as_finite_array(w, f'layer {l} weights',
                                (sizes[l + 1], sizes[l]))
            b = as_finite_array(b, f'layer {l} biases', (sizes[l + 1],))
            weights.append(_frozen(w))
            biases.append(_frozen(b))
        object.__setattr__(self, 'layer_sizes', sizes)
        object.__setattr__(self, 'weights', tuple(weights))
        object.__setattr__(self, 'biases', tuple(biases))

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        """All parameters as one vector, layer by layer, weights first."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    def with_parameters(self, flat) -> 'TranslatorModel':
        """A model of the same shape built from a :meth:`flatten` vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.parameter_count,):
            raise ValueError(f"expected {self.parameter_count} parameters, "
                             f"got shape {flat.shape}")
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(flat[offset:offset + b.size])
            offset += b.size
        return TranslatorModel(self.layer_sizes, tuple(weights), tuple(biases))


def init_model(layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES,
               seed: int = 0,
               zero_output_layer: bool = False) -> TranslatorModel:
    """
    Create a model with weights drawn from `U(-a, a)`,
    `a = sqrt(6 / (fan_in + fan_out))`, and zero biases.

    Args:
      layer_sizes: Widths from input (53) to output (17).
      seed (int): Seed of the weight draw.
      zero_output_layer (bool): Zero the final layer, so that every input maps
        to 0.5 in all 17 outputs.

    Returns:
      :class:`TranslatorModel`: The initialized model.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fanIn, fanOut in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fanIn + fanOut))
        weights.append(rng.uniform(-limit, limit, (fanOut, fanIn)))
        biases.append(np.zeros(fanOut))
    if zero_output_layer and weights:
        weights[-1] = np.zeros_like(weights[-1])
    return TranslatorModel(sizes, tuple(weights), tuple(biases))


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations recorded by :func:`forward_batch`."""
    inputs: List[np.ndarray]
    preactivations: List[np.ndarray]
    output: np.ndarray


def __input_batch(x):
    if isinstance(x, ExpressionParams):
        return x.vector[None, :]
    if len(x) and isinstance(x[0], ExpressionParams):
        return ExpressionParams.stack(x)
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def forward_batch(model: TranslatorModel,
                  x) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on an `(n, 53)` batch, returning the `(n, 17)`
    outputs and the cache :func:`backward` needs.
    """
    x = as_finite_array(__input_batch(x), 'model input', (None, INPUT_DIM))
    inputs, pre = [], []
    a = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        if l < model.depth - 1:
            a = np.where(z > 0, z, LEAKY_SLOPE * z)
        else:
            a = expit(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP))
    if not np.all(np.isfinite(a)):
        raise NumericalError("model produced non-finite outputs")
    return a, ForwardCache(inputs, pre, a)


def forward(model: TranslatorModel, p) -> np.ndarray:
    """
    Translate one human parameter vector into 17 anime coefficients in
    (0, 1).

    Args:
      model (:class:`TranslatorModel`): The network.
      p: An :class:`ExpressionParams` or a 53-vector `[psi; jaw]`.

    Returns:
      `numpy.ndarray`: The 17 coefficients.

    Raises:
      NonFiniteError: if `p` holds NaN or Inf.
    """
    x = __input_batch(p)
    if x.shape != (1, INPUT_DIM):
        raise ValueError(f"expected a single {INPUT_DIM}-vector, got shape "
                         f"{np.shape(p)}")
    out, _ = forward_batch(model, x)
    return out[0]


def backward(model: TranslatorModel, cache: ForwardCache, d_output):
    """
    Backpropagate `d_output = dL/d(output)` through the cached forward pass.
    Gradients are summed over the batch.

    Returns:
      A `(weight_grads, bias_grads)` pair of lists matching the model layout.
    """
    out = cache.output
    z = cache.preactivations[-1]
    dz = d_output * out * (1.0 - out) * (np.abs(z) < LOGIT_CLIP)
    weightGrads = [None] * model.depth
    biasGrads = [None] * model.depth
    for l in reversed(range(model.depth)):
        weightGrads[l] = dz.T @ cache.inputs[l]
        biasGrads[l] = dz.sum(axis=0)
        if l == 0:
            break
        da = dz @ model.weights[l]
        dz = da * np.where(cache.preactivations[l - 1] > 0, 1.0, LEAKY_SLOPE)
    return weightGrads, biasGrads


def flatten_gradients(weight_grads, bias_grads) -> np.ndarray:
    """Gradients in :meth:`TranslatorModel.flatten` order."""
    parts = []
    for w, b in zip(weight_grads, bias_grads):
        parts.append(w.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


class ModelFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    layer_sizes: List[int] = Field(min_length=2)
    weights: List[List[List[float]]]
    biases: List[List[float]]
    hidden_activation: Literal['leaky_relu_0.2'] = HIDDEN_ACTIVATION
    output_activation: Literal['sigmoid'] = OUTPUT_ACTIVATION


def save_model(model: TranslatorModel, path):
    write_model(
        path,
        ModelFile(layer_sizes=list(model.layer_sizes),
                  weights=[w.tolist() for w in model.weights],
                  biases=[b.tolist() for b in model.biases]))


def load_model(path) -> TranslatorModel:
    doc = read_model(path, ModelFile)
    try:
        weights = tuple(np.asarray(w, dtype=np.float64) for w in doc.weights)
        return TranslatorModel(tuple(doc.layer_sizes), weights,
                               tuple(np.asarray(b) for b in doc.biases))
    except (ValueError, NonFiniteError) as e:
        raise ArtifactError(f"{path}: {e}") from e
