# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..runtime.utils import (ArityError, DegenerateRigError, TopologyError,
                             as_finite_array)

# The blendshape rigs in this package describe the expression part of a
# linear face model: a neutral template plus coefficient-weighted per-vertex
# offsets. Shape identity is fixed and head rotation never enters a mesh;
# rotation is carried separately as head angles (see `angles.py`).

HUMAN_EXPR_DIM = 50
JAW_DIM = 3
ANIME_EXPR_DIM = 17
KEYPOINT_COUNT = 68
DEFAULT_CLAMP = 3.0

ANIME_SLOT_NAMES = (
    'eye_wink_left',
    'eye_wink_right',
    'eye_happy_left',
    'eye_happy_right',
    'eye_surprised_left',
    'eye_surprised_right',
    'brow_raise_left',
    'brow_raise_right',
    'brow_lower_left',
    'brow_lower_right',
    'brow_angry_left',
    'brow_angry_right',
    'mouth_a',
    'mouth_i',
    'mouth_u',
    'mouth_e',
    'mouth_o',
)


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """An ordered set of 3D vertices in model units."""
    vertices: np.ndarray

    def __post_init__(self):
        verts = as_finite_array(self.vertices, 'mesh vertices', (None, 3))
        object.__setattr__(self, 'vertices', _frozen(verts.copy()))

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True, eq=False)
class BlendshapeBasis:
    """
    A table of per-coefficient, per-vertex offsets of shape `(dim, V, 3)`.
    """
    deltas: np.ndarray

    def __post_init__(self):
        deltas = as_finite_array(self.deltas, 'blendshape deltas',
                                 (None, None, 3))
        object.__setattr__(self, 'deltas', _frozen(deltas.copy()))
        object.__setattr__(
            self, '_flat',
            _frozen(deltas.reshape(deltas.shape[0], -1).copy()))

    @property
    def dim(self) -> int:
        return self.deltas.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.deltas.shape[1]

    @property
    def flat(self) -> np.ndarray:
        """The deltas as a `(dim, 3V)` matrix."""
        return self._flat


def _as_pairs(pairs, name):
    arr = np.asarray(pairs if pairs is not None else [], dtype=np.int64)
    if arr.size % 2 or (arr.ndim > 1 and arr.shape[-1] != 2):
        raise TopologyError(f"{name} must be (upper, lower) slot pairs, got "
                            f"shape {arr.shape}")
    arr = arr.reshape(-1, 2)
    return _frozen(arr.copy())


@dataclass(frozen=True, eq=False)
class RigSpec:
    """
    The geometry of one face domain.

    A rig owns a neutral `template`, an expression basis, an optional jaw
    basis (human rigs only), and the landmark data the losses and metrics
    read: a table of 68 keypoint vertex indices plus the eyelid and outer
    mouth `(upper, lower)` keypoint-slot pairs. The first `eye_split` eyelid
    pairs belong to the first eye, the rest to the second.

    Rigs built without a keypoint table are valid for mesh synthesis only.
    """
    template: Mesh
    expr_basis: BlendshapeBasis
    jaw_basis: Optional[BlendshapeBasis] = None
    keypoint_indices: Optional[np.ndarray] = None
    eyelid_pairs: np.ndarray = None
    mouth_pairs: np.ndarray = None
    eye_split: Optional[int] = None
    neutral_eye_distance: Tuple[float, ...] = field(init=False, default=())

    def __post_init__(self):
        vertexCount = self.template.vertex_count
        if self.expr_basis.vertex_count != vertexCount:
            raise TopologyError(
                f"expression basis has {self.expr_basis.vertex_count} "
                f"vertices, template has {vertexCount}")
        if self.jaw_basis is not None and \
                self.jaw_basis.vertex_count != vertexCount:
            raise TopologyError(f"jaw basis has {self.jaw_basis.vertex_count} "
                                f"vertices, template has {vertexCount}")

        eyelid = _as_pairs(self.eyelid_pairs, 'eyelid_pairs')
        mouth = _as_pairs(self.mouth_pairs, 'mouth_pairs')
        object.__setattr__(self, 'eyelid_pairs', eyelid)
        object.__setattr__(self, 'mouth_pairs', mouth)

        if self.keypoint_indices is None:
            if len(eyelid) or len(mouth):
                raise TopologyError(
                    "landmark pairs given for a rig without keypoints")
            object.__setattr__(self, 'eye_split', None)
            return

        kp = np.asarray(self.keypoint_indices, dtype=np.int64)
        if kp.shape != (KEYPOINT_COUNT,):
            raise TopologyError(f"expected {KEYPOINT_COUNT} keypoint indices, "
                                f"got {kp.size}")
        if np.any(kp < 0) or np.any(kp >= vertexCount):
            raise TopologyError(
                f"keypoint index out of range for {vertexCount} vertices")
        if len(np.unique(kp)) != KEYPOINT_COUNT:
            raise TopologyError("keypoint indices must be distinct")
        object.__setattr__(self, 'keypoint_indices', _frozen(kp.copy()))

        for name, pairs in (('eyelid', eyelid), ('mouth', mouth)):
            if np.any(pairs < 0) or np.any(pairs >= KEYPOINT_COUNT):
                raise TopologyError(
                    f"{name} pair references a slot outside 0..67")

        split = len(eyelid) // 2 if self.eye_split is None else int(
            self.eye_split)
        if not 0 <= split <= len(eyelid):
            raise TopologyError(f"eye_split {split} outside 0..{len(eyelid)}")
        object.__setattr__(self, 'eye_split', split)

        if len(eyelid):
            neutral = extract_keypoints(self, self.template)
            distances = []
            for eye in self.eye_pair_sets():
                if len(eye) == 0:
                    raise DegenerateRigError("an eye has no eyelid pairs")
                distances.append(
                    float(closure_offsets(neutral, eye).sum(axis=-1).mean()))
            if min(distances) <= 0.0:
                raise DegenerateRigError(
                    f"neutral eyelid distance must be positive, got "
                    f"{distances}")
            object.__setattr__(self, 'neutral_eye_distance', tuple(distances))

    @property
    def vertex_count(self) -> int:
        return self.template.vertex_count

    @property
    def has_keypoints(self) -> bool:
        return self.keypoint_indices is not None

    @property
    def coefficient_count(self) -> int:
        """Expression plus jaw coefficient count."""
        return self.expr_basis.dim + (0 if self.jaw_basis is None else
                                      self.jaw_basis.dim)

    def eye_pair_sets(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return the eyelid pairs of the first and second eye."""
        return self.eyelid_pairs[:self.eye_split], \
            self.eyelid_pairs[self.eye_split:]

    def closure_pairs(self) -> np.ndarray:
        """The union of eyelid and mouth pairs, eyelid pairs first."""
        return np.concatenate([self.eyelid_pairs, self.mouth_pairs], axis=0)


@dataclass(frozen=True, eq=False)
class ExpressionParams:
    """
    Human-side input p = [psi; jaw]. Values are clamped to `[-clamp, clamp]`
    on construction.
    """
    psi: np.ndarray
    jaw: np.ndarray
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        if not self.clamp > 0:
            raise ValueError(f"clamp range must be positive, got {self.clamp}")
        psi = as_finite_array(self.psi, 'psi', (HUMAN_EXPR_DIM,))
        jaw = as_finite_array(self.jaw, 'jaw', (JAW_DIM,))
        object.__setattr__(self, 'psi',
                           _frozen(np.clip(psi, -self.clamp, self.clamp)))
        object.__setattr__(self, 'jaw',
                           _frozen(np.clip(jaw, -self.clamp, self.clamp)))

    @property
    def vector(self) -> np.ndarray:
        """The concatenation [psi; jaw] of length 53."""
        return np.concatenate([self.psi, self.jaw])

    @classmethod
    def from_vector(cls, values, clamp=DEFAULT_CLAMP) -> 'ExpressionParams':
        values = as_finite_array(values, 'expression parameters',
                                 (HUMAN_EXPR_DIM + JAW_DIM,))
        return cls(values[:HUMAN_EXPR_DIM], values[HUMAN_EXPR_DIM:], clamp)

    @staticmethod
    def stack(params) -> np.ndarray:
        """Stack a sequence of `ExpressionParams` into an `(n, 53)` array."""
        if len(params) == 0:
            return np.zeros((0, HUMAN_EXPR_DIM + JAW_DIM))
        return np.stack([p.vector for p in params])


@dataclass(frozen=True, eq=False)
class AnimePose:
    """
    Anime-side pose v = [b; h]: 17 expression coefficients in [0, 1] (slots
    0-5 eyes, 6-11 eyebrows, 12-16 mouth, see `ANIME_SLOT_NAMES`) and three
    head angles in radians.
    """
    b: np.ndarray
    h: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        b = as_finite_array(self.b, 'anime coefficients', (ANIME_EXPR_DIM,))
        h = as_finite_array(self.h, 'head angles', (3,))
        if np.any(b < 0.0) or np.any(b > 1.0):
            raise ValueError("anime coefficients must lie in [0, 1]")
        if np.any(np.abs(h) > math.pi):
            raise ValueError("head angles must lie in [-pi, pi]")
        object.__setattr__(self, 'b', _frozen(b.copy()))
        object.__setattr__(self, 'h', _frozen(h.copy()))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.b, self.h])

    def named(self) -> dict:
        return dict(zip(ANIME_SLOT_NAMES, self.b.tolist()))


def __checkCoefficients(rig, expr, jaw, batched):
    lead = (None,) if batched else ()
    expr = as_finite_array(expr, 'expression coefficients', None)
    if expr.shape[-1:] != (rig.expr_basis.dim,) or expr.ndim != len(lead) + 1:
        raise ArityError(f"expected {rig.expr_basis.dim} expression "
                         f"coefficients, got shape {expr.shape}")
    if rig.jaw_basis is None:
        if jaw is not None:
            raise ArityError("rig has no jaw basis but jaw values were given")
        return expr, None
    if jaw is None:
        raise ArityError(f"rig needs {rig.jaw_basis.dim} jaw coefficients")
    jaw = as_finite_array(jaw, 'jaw coefficients', None)
    if jaw.shape != expr.shape[:-1] + (rig.jaw_basis.dim,):
        raise ArityError(f"expected {rig.jaw_basis.dim} jaw coefficients, got "
                         f"shape {jaw.shape}")
    return expr, jaw


def synthesize_mesh(rig: RigSpec, expr, jaw=None) -> Mesh:
    """
    Evaluate the linear blendshape model
    `T + sum_i expr[i] * dE_i + sum_j jaw[j] * dJ_j`.

    Args:
      rig (:class:`RigSpec`): The rig to evaluate.
      expr: One coefficient per expression blendshape.
      jaw: One coefficient per jaw blendshape; required exactly when the rig
        has a jaw basis.

    Returns:
      :class:`Mesh`: The deformed mesh, on the rig's topology.

    Raises:
      ArityError: if a coefficient vector has the wrong length.
      NonFiniteError: if a coefficient is NaN or Inf.
    """
    expr, jaw = __checkCoefficients(rig, expr, jaw, batched=False)
    return Mesh(_blend(rig, expr, jaw).reshape(-1, 3))


def synthesize_meshes(rig: RigSpec, expr, jaw=None) -> np.ndarray:
    """
    Batched :func:`synthesize_mesh`: `expr` is `(n, dim)`, `jaw` is `(n, 3)`
    and the result is an `(n, V, 3)` array.
    """
    expr, jaw = __checkCoefficients(rig, expr, jaw, batched=True)
    return _blend(rig, expr, jaw).reshape(len(expr), -1, 3)


def _blend(rig, expr, jaw):
    flat = rig.template.vertices.reshape(-1) + expr @ rig.expr_basis.flat
    if jaw is not None:
        flat = flat + jaw @ rig.jaw_basis.flat
    return flat


def extract_keypoints(rig: RigSpec, mesh) -> np.ndarray:
    """
    Gather the 68 keypoints of `mesh` through the rig's index table, in slot
    order. `mesh` may be a :class:`Mesh` or a `(V, 3)` array.
    """
    if not rig.has_keypoints:
        raise TopologyError("rig has no keypoint table")
    verts = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh)
    if verts.shape != (rig.vertex_count, 3):
        raise TopologyError(f"mesh has shape {verts.shape}, rig expects "
                            f"({rig.vertex_count}, 3)")
    return verts[rig.keypoint_indices]


def extract_keypoints_batch(rig: RigSpec, meshes) -> np.ndarray:
    """Batched :func:`extract_keypoints` over an `(n, V, 3)` array."""
    if not rig.has_keypoints:
        raise TopologyError("rig has no keypoint table")
    meshes = np.asarray(meshes)
    if meshes.ndim != 3 or meshes.shape[1:] != (rig.vertex_count, 3):
        raise TopologyError(f"meshes have shape {meshes.shape}, rig expects "
                            f"(n, {rig.vertex_count}, 3)")
    return meshes[:, rig.keypoint_indices, :]


def closure_offsets(keypoints, pairs) -> np.ndarray:
    """
    Componentwise absolute offsets `|k_i - k_j|` for every `(i, j)` in
    `pairs`. Leading batch axes of `keypoints` are preserved; the result has
    shape `(..., len(pairs), 3)`.
    """
    keypoints = np.asarray(keypoints, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if keypoints.ndim < 2 or keypoints.shape[-1] != 3:
        raise TopologyError(
            f"keypoints must have shape (..., n, 3), got {keypoints.shape}")
    slots = keypoints.shape[-2]
    if np.any(pairs < 0) or np.any(pairs >= slots):
        raise TopologyError(f"pair index outside 0..{slots - 1}")
    return np.abs(keypoints[..., pairs[:, 0], :] -
                  keypoints[..., pairs[:, 1], :])
