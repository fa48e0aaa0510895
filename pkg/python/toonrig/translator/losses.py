# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
The 3D geometric-aware loss.

Both sides of the loss live on the human rig. The target is the human mesh
under `p = [psi; jaw]`; the prediction is the human mesh under
`psi_hat = A b_hat` with zero jaw, where `b_hat` is the network output and
`A` the pose adapter. Three terms compare them:

  - landmark: sum over the 68 keypoints of the l1 distance,
  - closure: sum over eyelid and mouth pairs of the l1 difference between
    componentwise absolute offsets,
  - vertex: mean squared coordinate error over the whole mesh.

Subgradients use `sign(0) = 0`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..adapter.pose_adapter import AdapterMatrix, apply_adapter
from ..rig.core import (JAW_DIM, Mesh, RigSpec, extract_keypoints_batch,
                        synthesize_meshes)
from ..runtime.utils import NumericalError, TopologyError, as_finite_array
from .model import (INPUT_DIM, LOGIT_CLIP, TranslatorModel, backward,
                    flatten_gradients, forward_batch)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_VER = 100.0
# Kink arguments closer to zero than this count as sitting on the kink.
KINK_ATOL = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    """The three loss terms and their weighted sum."""
    l_lm: float
    l_closure: float
    l_ver: float
    l_total: float

    def as_row(self):
        return [self.l_lm, self.l_closure, self.l_ver, self.l_total]


def _keypoint_pair(pred_k, target_k):
    pred_k = np.asarray(pred_k, dtype=np.float64)
    target_k = np.asarray(target_k, dtype=np.float64)
    if pred_k.shape != target_k.shape or pred_k.shape[-1:] != (3,):
        raise TopologyError(f"keypoint sets disagree: {pred_k.shape} vs "
                            f"{target_k.shape}")
    return pred_k, target_k


def loss_landmark(pred_k, target_k) -> float:
    """Sum of per-keypoint l1 distances between two keypoint sets."""
    pred_k, target_k = _keypoint_pair(pred_k, target_k)
    return float(np.abs(pred_k - target_k).sum())


def kink_side(x, atol=KINK_ATOL) -> np.ndarray:
    """Side of the kink at zero for each entry of `x`: -1, 0 or 1."""
    x = np.asarray(x)
    return np.where(np.abs(x) < atol, 0, np.sign(x)).astype(np.int8)


def _pair_offsets(keypoints, pairs):
    return keypoints[..., pairs[:, 0], :] - keypoints[..., pairs[:, 1], :]


def _check_pairs(pairs, slots):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any(pairs < 0) or np.any(pairs >= slots):
        raise TopologyError(f"pair index outside 0..{slots - 1}")
    return pairs


def loss_closure(pred_k, target_k, eyelid_pairs, mouth_pairs) -> float:
    """
    Sum over eyelid and mouth pairs `(i, j)` of
    `| |k_hat_i - k_hat_j| - |k_i - k_j| |_1`. Invariant under translating
    either keypoint set.
    """
    pred_k, target_k = _keypoint_pair(pred_k, target_k)
    slots = pred_k.shape[-2]
    pairs = np.concatenate([
        _check_pairs(eyelid_pairs, slots),
        _check_pairs(mouth_pairs, slots)
    ])
    gap = np.abs(_pair_offsets(pred_k, pairs)) - np.abs(
        _pair_offsets(target_k, pairs))
    return float(np.abs(gap).sum())


def loss_vertex(pred_mesh, target_mesh) -> float:
    """Mean squared error over all `3V` vertex coordinates."""
    pred = pred_mesh.vertices if isinstance(pred_mesh, Mesh) else np.asarray(
        pred_mesh, dtype=np.float64)
    target = target_mesh.vertices if isinstance(
        target_mesh, Mesh) else np.asarray(target_mesh, dtype=np.float64)
    if pred.shape != target.shape:
        raise TopologyError(f"meshes disagree: {pred.shape} vs "
                            f"{target.shape}")
    return float(np.mean(np.square(pred - target)))


@dataclass
class LossEvaluation:
    """
    Result of :meth:`GeometricLoss.evaluate`: the batch-mean breakdown, the
    per-sample totals and, on request, the flat parameter gradient and the
    sign pattern of every kink argument.
    """
    breakdown: LossBreakdown
    per_sample: np.ndarray
    gradient: Optional[np.ndarray] = None
    signature: Optional[Tuple[np.ndarray, ...]] = None


class GeometricLoss:
    """
    The training objective

        l_total = w_lm l_lm + w_cl l_closure + lambda_ver l_ver

    evaluated per sample and averaged over a batch. `use_landmark` and
    `use_closure` switch `w_lm` and `w_cl` between 1 and 0; `lambda_ver = 0`
    drops the vertex term.

    Args:
      human_rig (:class:`RigSpec`): Rig both meshes are realised on. Needs a
        keypoint table and a jaw basis.
      adapter (:class:`AdapterMatrix`): Lift from anime coefficients to
        `psi`.
      lambda_ver (float): Vertex-term weight.
      use_landmark (bool): Include the landmark term.
      use_closure (bool): Include the closure term.
      anime_rig (:class:`RigSpec`, optional): Checked against the adapter's
        anime dimension when given.
    """

    def __init__(self,
                 human_rig: RigSpec,
                 adapter: AdapterMatrix,
                 lambda_ver: float = DEFAULT_LAMBDA_VER,
                 use_landmark: bool = True,
                 use_closure: bool = True,
                 anime_rig: Optional[RigSpec] = None):
        if not lambda_ver >= 0:
            raise ValueError(f"lambda_ver must be >= 0, got {lambda_ver}")
        if not human_rig.has_keypoints:
            raise TopologyError("the human rig has no keypoint table")
        if human_rig.jaw_basis is None or human_rig.jaw_basis.dim != JAW_DIM:
            raise TopologyError(f"the human rig needs {JAW_DIM} jaw "
                                f"blendshapes")
        if human_rig.expr_basis.dim + JAW_DIM != INPUT_DIM:
            raise TopologyError(f"the human rig has {human_rig.expr_basis.dim}"
                                f" expression blendshapes, the model reads "
                                f"{INPUT_DIM - JAW_DIM}")
        if adapter.expr_dim != human_rig.expr_basis.dim:
            raise TopologyError(f"adapter lifts into {adapter.expr_dim} "
                                f"dimensions, the human rig has "
                                f"{human_rig.expr_basis.dim}")
        if anime_rig is not None and \
                anime_rig.expr_basis.dim != adapter.anime_dim:
            raise TopologyError(f"adapter has {adapter.anime_dim} columns, "
                                f"the anime rig {anime_rig.expr_basis.dim} "
                                f"dimensions")
        self.human_rig = human_rig
        self.adapter = adapter
        self.lambda_ver = float(lambda_ver)
        self.w_lm = 1.0 if use_landmark else 0.0
        self.w_cl = 1.0 if use_closure else 0.0
        self.pairs = human_rig.closure_pairs()

    def targets(self, params) -> Tuple[np.ndarray, np.ndarray]:
        """Target meshes `(n, V, 3)` and keypoints `(n, 68, 3)`."""
        p = as_finite_array(params, 'expression parameters',
                            (None, INPUT_DIM))
        dim = self.human_rig.expr_basis.dim
        meshes = synthesize_meshes(self.human_rig,
                                   np.ascontiguousarray(p[:, :dim]),
                                   np.ascontiguousarray(p[:, dim:]))
        return meshes, extract_keypoints_batch(self.human_rig, meshes)

    def predictions(self, b_hat) -> Tuple[np.ndarray, np.ndarray]:
        """Predicted meshes and keypoints for network outputs `b_hat`."""
        psiHat = apply_adapter(self.adapter, b_hat)
        meshes = synthesize_meshes(self.human_rig, psiHat,
                                   np.zeros((len(psiHat), JAW_DIM)))
        return meshes, extract_keypoints_batch(self.human_rig, meshes)

    def compose(self, l_lm, l_closure, l_ver):
        return self.w_lm * l_lm + self.w_cl * l_closure + \
            self.lambda_ver * l_ver

    def evaluate(self,
                 model: TranslatorModel,
                 params,
                 with_gradient: bool = False,
                 with_signature: bool = False) -> LossEvaluation:
        """
        Evaluate the batch-mean loss of `model` on `params` (`(n, 53)` or a
        list of :class:`ExpressionParams`).

        Raises:
          NumericalError: if any intermediate is non-finite.
        """
        bHat, cache = forward_batch(model, params)
        n = len(bHat)
        meshT, kT = self.targets(cache.inputs[0])
        meshP, kP = self.predictions(bHat)
        if not (np.all(np.isfinite(meshP)) and np.all(np.isfinite(meshT))):
            raise NumericalError("non-finite mesh coordinates in the loss")

        diffK = kP - kT
        offsetP = _pair_offsets(kP, self.pairs)
        gap = np.abs(offsetP) - np.abs(_pair_offsets(kT, self.pairs))
        diffV = meshP - meshT

        lm = np.abs(diffK).sum(axis=(1, 2))
        cl = np.abs(gap).sum(axis=(1, 2))
        ver = np.square(diffV).reshape(n, -1).mean(axis=1)
        perSample = self.compose(lm, cl, ver)
        lLm, lCl, lVer = float(lm.mean()), float(cl.mean()), float(ver.mean())
        breakdown = LossBreakdown(lLm, lCl, lVer,
                                  float(self.compose(lLm, lCl, lVer)))
        if not np.isfinite(breakdown.l_total):
            raise NumericalError(f"non-finite loss {breakdown}")

        result = LossEvaluation(breakdown, perSample)
        if with_gradient:
            result.gradient = self._gradient(model, cache, diffK, offsetP, gap,
                                             diffV)
        if with_signature:
            hidden = tuple(kink_side(z) for z in cache.preactivations[:-1])
            clip = kink_side(np.abs(cache.preactivations[-1]) - LOGIT_CLIP)
            result.signature = hidden + (clip, kink_side(diffK),
                                         kink_side(offsetP), kink_side(gap))
        return result

    def _gradient(self, model, cache, diffK, offsetP, gap, diffV):
        n, vertexCount = diffV.shape[0], diffV.shape[1]
        dMesh = (2.0 * self.lambda_ver / (3 * vertexCount * n)) * diffV

        dK = (self.w_lm / n) * np.sign(diffK)
        pairGrad = (self.w_cl / n) * np.sign(gap) * np.sign(offsetP)
        np.add.at(dK, (slice(None), self.pairs[:, 0]), pairGrad)
        np.add.at(dK, (slice(None), self.pairs[:, 1]), -pairGrad)
        dMesh[:, self.human_rig.keypoint_indices, :] += dK

        dPsi = dMesh.reshape(n, -1) @ self.human_rig.expr_basis.flat.T
        dB = dPsi @ self.adapter.matrix
        weightGrads, biasGrads = backward(model, cache, dB)
        grad = flatten_gradients(weightGrads, biasGrads)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient")
        return grad

    def breakdown(self, model, params) -> LossBreakdown:
        return self.evaluate(model, params).breakdown

    def value_and_gradient(self, model,
                           params) -> Tuple[LossBreakdown, np.ndarray]:
        ev = self.evaluate(model, params, with_gradient=True)
        return ev.breakdown, ev.gradient


def loss_total(p,
               model: TranslatorModel,
               adapter: AdapterMatrix,
               human_rig: RigSpec,
               anime_rig: Optional[RigSpec] = None,
               lambda_ver: float = DEFAULT_LAMBDA_VER) -> LossBreakdown:
    """
    The loss breakdown of a single sample `p`. See :class:`GeometricLoss`.
    """
    loss = GeometricLoss(human_rig, adapter, lambda_ver, anime_rig=anime_rig)
    return loss.breakdown(model, [p] if not hasattr(p, 'shape') else
                          np.asarray(p).reshape(1, -1))
