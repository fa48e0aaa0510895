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
from typing import List

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from ..rig.core import RigSpec
from ..rig.io import read_model, write_model
from ..runtime.utils import (ArtifactError, IllPosedError, TopologyError,
                             as_finite_array)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_REG = 1e-4


@dataclass(frozen=True, eq=False)
class AdapterMatrix:
    """
    The pose adapter: a linear lift of anime coefficients `b` into the human
    expression space. `matrix` has one column per anime dimension; column
    `j` is the human expression vector that reproduces full activation of
    anime dimension `j`.
    """
    matrix: np.ndarray
    regularization_used: float = 0.0

    def __post_init__(self):
        mat = as_finite_array(self.matrix, 'adapter matrix', (None, None))
        if self.regularization_used < 0:
            raise ValueError("regularization must be nonnegative")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, 'matrix', mat)

    @property
    def columns(self) -> np.ndarray:
        """The columns as an `(anime_dim, expr_dim)` array."""
        return self.matrix.T

    @property
    def anime_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def expr_dim(self) -> int:
        return self.matrix.shape[0]


def _displacement_matrix(rig: RigSpec, fit_on: str) -> np.ndarray:
    # Rows are stacked (slot, coordinate) displacements, one column per
    # expression coefficient.
    deltas = rig.expr_basis.deltas
    if fit_on == 'keypoints':
        if not rig.has_keypoints:
            raise TopologyError("adapter fitting on keypoints needs a "
                                "keypoint table on both rigs")
        deltas = deltas[:, rig.keypoint_indices, :]
    elif fit_on != 'vertices':
        raise ValueError(f"fit_on must be 'keypoints' or 'vertices', got "
                         f"'{fit_on}'")
    return deltas.reshape(deltas.shape[0], -1).T


def fit_pose_adapter(human_rig: RigSpec,
                     anime_rig: RigSpec,
                     lambda_reg: float = DEFAULT_LAMBDA_REG,
                     fit_on: str = 'keypoints') -> AdapterMatrix:
    """
    Fit the pose adapter column by column. For each anime dimension `j`, the
    column is the ridge solution

        argmin_psi |K_h psi - K_a e_j|^2 + lambda_reg |psi|^2

    where `K_h` maps human expression coefficients to displacements from the
    neutral pose and `K_a e_j` is the anime displacement under unit activation
    of dimension `j`. Displacements are taken on the 68 keypoints, or on every
    vertex with `fit_on='vertices'` (which needs a shared topology).

    Args:
      human_rig (:class:`RigSpec`): Rig spanning the target expression space.
      anime_rig (:class:`RigSpec`): Rig whose coefficients are lifted.
      lambda_reg (float): Ridge weight, `>= 0`.
      fit_on (str): `'keypoints'` (default) or `'vertices'`.

    Returns:
      :class:`AdapterMatrix`: The fitted adapter.

    Raises:
      IllPosedError: if `lambda_reg == 0` and the human displacement system is
        rank deficient.
    """
    if not lambda_reg >= 0:
        raise ValueError(f"lambda_reg must be >= 0, got {lambda_reg}")
    humanK = _displacement_matrix(human_rig, fit_on)
    animeK = _displacement_matrix(anime_rig, fit_on)
    if humanK.shape[0] != animeK.shape[0]:
        raise TopologyError(f"rigs disagree on the fitting space: "
                            f"{humanK.shape[0]} vs {animeK.shape[0]} rows")

    exprDim = humanK.shape[1]
    # The ridge problem as an augmented ordinary least-squares system keeps
    # the conditioning of K_h instead of squaring it.
    lhs = np.vstack([humanK, np.sqrt(lambda_reg) * np.eye(exprDim)])
    rhs = np.vstack([animeK, np.zeros((exprDim, animeK.shape[1]))])
    # Rank cutoff as in numpy.linalg.matrix_rank.
    cond = max(lhs.shape) * np.finfo(lhs.dtype).eps
    solution, _, rank, _ = scipy.linalg.lstsq(lhs,
                                              rhs,
                                              cond=cond,
                                              lapack_driver='gelsd')
    if lambda_reg == 0 and rank < exprDim:
        raise IllPosedError(
            f"human displacement system has rank {rank} < {exprDim}; fit "
            f"with lambda_reg > 0")

    if logger.isEnabledFor(logging.DEBUG):
        residual = np.linalg.norm(humanK @ solution - animeK, axis=0)
        for j, r in enumerate(residual):
            logger.debug("adapter column %d residual %.3e", j, r)
    return AdapterMatrix(solution, float(lambda_reg))


def apply_adapter(adapter: AdapterMatrix, b) -> np.ndarray:
    """
    Lift anime coefficients into the human expression space, `psi = A b`.
    `b` may be a single vector or an `(n, anime_dim)` batch. Values outside
    [0, 1] are accepted.
    """
    b = as_finite_array(b, 'anime coefficients', None)
    if b.shape[-1:] != (adapter.anime_dim,) or b.ndim > 2:
        raise ValueError(f"expected {adapter.anime_dim} anime coefficients, "
                         f"got shape {b.shape}")
    if b.ndim == 1:
        return adapter.matrix @ b
    return b @ adapter.matrix.T


def project_to_anime(adapter: AdapterMatrix, psi) -> np.ndarray:
    """
    Invert the adapter directly: least-squares anime coefficients whose lift
    best reproduces `psi`, clamped to [0, 1]. This is the optimisation-style
    mapping the translation network replaces, kept as a baseline.
    """
    psi = as_finite_array(psi, 'expression coefficients', None)
    if psi.shape[-1:] != (adapter.expr_dim,) or psi.ndim > 2:
        raise ValueError(f"expected {adapter.expr_dim} expression "
                         f"coefficients, got shape {psi.shape}")
    rhs = psi.reshape(-1, adapter.expr_dim).T
    b, _, _, _ = scipy.linalg.lstsq(adapter.matrix, rhs, lapack_driver='gelsd')
    b = np.clip(b.T, 0.0, 1.0)
    return b[0] if psi.ndim == 1 else b


class AdapterFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    lambda_reg: float = Field(ge=0)
    columns: List[List[float]]


def save_adapter(adapter: AdapterMatrix, path):
    write_model(
        path,
        AdapterFile(lambda_reg=adapter.regularization_used,
                    columns=adapter.columns.tolist()))


def load_adapter(path) -> AdapterMatrix:
    doc = read_model(path, AdapterFile)
    lengths = {len(c) for c in doc.columns}
    if not doc.columns or len(lengths) != 1:
        raise ArtifactError(f"{path}: columns must be a non-empty list of "
                            f"equal-length vectors")
    return AdapterMatrix(np.asarray(doc.columns).T, doc.lambda_reg)
