# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
Seeded synthetic rigs with a known cross-domain mapping.

The human rig of a pair is built from the anime rig: given 17 centred,
smooth anime delta fields `F` and a ground-truth matrix `G` (17 x 53), the
human expression and jaw deltas are `H = F G`. A human pose `p` then displaces
the face by `sum_j (G p)_j F_j`, which is exactly the anime displacement under
`b* = G p + 0.5` because the fields sum to zero. A zero-loss translator
therefore exists for every unclamped label.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..rig.core import (ANIME_EXPR_DIM, DEFAULT_CLAMP, HUMAN_EXPR_DIM,
                        JAW_DIM, KEYPOINT_COUNT, BlendshapeBasis,
                        ExpressionParams, Mesh, RigSpec)
from ..runtime.utils import (ArtifactError, as_finite_array, read_csv,
                             write_csv)

logger = logging.getLogger(__name__)

PARAM_DIM = HUMAN_EXPR_DIM + JAW_DIM
HUMAN_EYE_GAP = 0.04
LABEL_STD = 0.1

# Keypoint-slot pairs of the canonical 68-point layout.
EYELID_PAIRS = ((36, 41), (37, 40), (38, 39), (42, 47), (43, 46), (44, 45))
MOUTH_PAIRS = ((50, 58), (51, 57), (52, 56))
EYE_SPLIT = 3

# Anime dimensions that move the lids of each eye, with the lid-gap change
# in units of the human neutral gap. The motions of one eye sum to zero.
_LID_MOTION = (
    ((0, -1.0), (2, -1.0), (4, 2.0)),
    ((1, -1.0), (3, -1.0), (5, 2.0)),
)

_FACE_HALF_WIDTH = 0.5
_FACE_HALF_HEIGHT = 0.65
_FIELD_SCALE = 0.6
_FIELD_FREQ = 4


def _stream(seed, tag):
    return np.random.default_rng([int(seed), tag])


def _dome(xy):
    r2 = (xy[:, 0] / _FACE_HALF_WIDTH)**2 + (xy[:, 1] / _FACE_HALF_HEIGHT)**2
    return 0.1 * (1.0 - np.minimum(r2, 1.0))


def canonical_landmarks(eye_gap: float = HUMAN_EYE_GAP) -> np.ndarray:
    """
    The neutral 68-slot landmark layout used by synthetic rigs.

    Slots 0-16 trace the jaw, 17-26 the brows, 27-35 the nose, 36-41 and
    42-47 the two eyes (upper lid first, lower lid in reverse order so that
    pairs `(36, 41)`, `(37, 40)`, `(38, 39)` share an x position), 48-59 the
    outer and 60-67 the inner lip contour. Each lid pair is `eye_gap` apart
    vertically.
    """
    if not eye_gap > 0:
        raise ValueError(f"eye gap must be positive, got {eye_gap}")
    xy = np.zeros((KEYPOINT_COUNT, 2))
    t = math.pi + math.pi * np.arange(17) / 16
    xy[0:17] = np.stack([0.45 * np.cos(t), -0.05 + 0.5 * np.sin(t)], axis=1)
    xy[17:22] = np.stack([np.linspace(-0.35, -0.1, 5), np.full(5, 0.25)], 1)
    xy[22:27] = np.stack([np.linspace(0.1, 0.35, 5), np.full(5, 0.25)], 1)
    xy[27:31] = np.stack([np.zeros(4), np.linspace(0.15, -0.05, 4)], 1)
    xy[31:36] = np.stack([np.linspace(-0.08, 0.08, 5), np.full(5, -0.1)], 1)

    for first, xs in ((36, (-0.28, -0.22, -0.16)), (42, (0.16, 0.22, 0.28))):
        xy[first:first + 3, 0] = xs
        xy[first:first + 3, 1] = 0.1 + eye_gap / 2
        xy[first + 3:first + 6, 0] = xs[::-1]
        xy[first + 3:first + 6, 1] = 0.1 - eye_gap / 2

    outerX = np.array([-0.12, -0.06, 0.0, 0.06, 0.12])
    xy[48] = (-0.2, -0.3)
    xy[49:54] = np.stack([outerX, np.full(5, -0.27)], 1)
    xy[54] = (0.2, -0.3)
    xy[55:60] = np.stack([outerX[::-1], np.full(5, -0.33)], 1)
    innerX = np.array([-0.05, 0.0, 0.05])
    xy[60] = (-0.15, -0.3)
    xy[61:64] = np.stack([innerX, np.full(3, -0.29)], 1)
    xy[64] = (0.15, -0.3)
    xy[65:68] = np.stack([innerX[::-1], np.full(3, -0.31)], 1)
    z = _dome(xy)
    # Lids sit at the depth of the eye line, so lid pairs differ only in y.
    z[36:48] = _dome(np.column_stack([xy[36:48, 0], np.full(12, 0.1)]))
    return np.column_stack([xy, z])


def _face_vertices(rng, count):
    """Uniform samples over the face ellipse, lifted onto the dome."""
    r = np.sqrt(rng.uniform(0.0, 1.0, count))
    theta = rng.uniform(0.0, 2 * math.pi, count)
    xy = np.stack([
        _FACE_HALF_WIDTH * r * np.cos(theta),
        _FACE_HALF_HEIGHT * r * np.sin(theta)
    ], 1)
    return np.column_stack([xy, _dome(xy)])


def _template(rng, vertex_count, eye_gap):
    if vertex_count < KEYPOINT_COUNT:
        raise ValueError(f"a rig needs at least {KEYPOINT_COUNT} vertices, "
                         f"got {vertex_count}")
    keypoints = rng.permutation(vertex_count)[:KEYPOINT_COUNT]
    verts = _face_vertices(rng, vertex_count)
    verts[keypoints] = canonical_landmarks(eye_gap)
    return verts, keypoints


def _trig_basis(positions):
    u = positions[:, :2] / _FIELD_SCALE
    columns, damping = [], []
    for a in range(_FIELD_FREQ):
        for b in range(_FIELD_FREQ):
            phase = math.pi * (a * u[:, 0] + b * u[:, 1])
            columns.append(np.cos(phase))
            damping.append(1.0 + a + b)
            if a or b:
                columns.append(np.sin(phase))
                damping.append(1.0 + a + b)
    return np.stack(columns, 1), np.asarray(damping)


def smooth_fields(rng, positions, count) -> np.ndarray:
    """
    `count` random low-frequency displacement fields over `positions`, as a
    `(count, V, 3)` array. Higher frequencies get smaller coefficients.
    """
    basis, damping = _trig_basis(positions)
    coeffs = rng.standard_normal((count, basis.shape[1], 3))
    coeffs /= damping[None, :, None]
    return np.einsum('vk,nkc->nvc', basis, coeffs)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _random_ground_truth(seed, sample_range):
    """A 17 x 53 map whose outputs have standard deviation `LABEL_STD`."""
    g = _stream(seed, 1).standard_normal((ANIME_EXPR_DIM, PARAM_DIM))
    variance = np.concatenate([
        np.full(HUMAN_EXPR_DIM, sample_range**2 / 3),
        np.full(JAW_DIM, (sample_range / 3)**2 / 12)
    ])
    g *= LABEL_STD / np.sqrt(np.square(g) @ variance)[:, None]
    return g


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """
    Parameters of a synthetic rig pair. When `ground_truth` is omitted a
    random `G` is drawn from `rng_seed`, scaled so that `G p` has standard
    deviation `LABEL_STD` under `sample_expressions(..., r=sample_range)`.
    """
    vertex_count: int = 468
    rng_seed: int = 0
    delta_scale: float = 0.05
    eye_gap: float = HUMAN_EYE_GAP
    sample_range: float = 1.0
    ground_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.vertex_count < KEYPOINT_COUNT:
            raise ValueError(f"vertex_count must be >= {KEYPOINT_COUNT}, got "
                             f"{self.vertex_count}")
        if not self.delta_scale > 0:
            raise ValueError("delta_scale must be positive")
        if not self.eye_gap > 0 or not self.sample_range > 0:
            raise ValueError("eye_gap and sample_range must be positive")
        g = self.ground_truth
        if g is None:
            g = _random_ground_truth(self.rng_seed, self.sample_range)
        g = as_finite_array(g, 'ground truth', (ANIME_EXPR_DIM, PARAM_DIM))
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, 'ground_truth', g)


def make_rig_pair(spec: SynthSpec) -> Tuple[RigSpec, RigSpec]:
    """
    Build a `(human, anime)` rig pair sharing one topology and keypoint
    table. The anime neutral differs from the human one only by a doubled
    eyelid gap.
    """
    rng = _stream(spec.rng_seed, 2)
    gap = spec.eye_gap
    verts, keypoints = _template(rng, spec.vertex_count, gap)
    animeVerts = verts.copy()
    animeVerts[keypoints] = canonical_landmarks(2 * gap)

    fields = smooth_fields(rng, verts, ANIME_EXPR_DIM)
    fields -= fields.mean(axis=0, keepdims=True)
    g = spec.ground_truth
    human = np.einsum('jvc,ji->ivc', fields, g)
    fields *= spec.delta_scale / max(_rms(human), 1e-300)

    # Lower lid vertices follow the upper lid plus an explicit closing or
    # opening motion along y.
    eyes = (EYELID_PAIRS[:EYE_SPLIT], EYELID_PAIRS[EYE_SPLIT:])
    for eye, motions in zip(eyes, _LID_MOTION):
        for upperSlot, lowerSlot in eye:
            upper, lower = keypoints[upperSlot], keypoints[lowerSlot]
            fields[:, lower] = fields[:, upper]
            for dim, amount in motions:
                fields[dim, lower, 1] += amount * gap

    human = np.einsum('jvc,ji->ivc', fields, g)
    common = dict(keypoint_indices=keypoints,
                  eyelid_pairs=EYELID_PAIRS,
                  mouth_pairs=MOUTH_PAIRS,
                  eye_split=EYE_SPLIT)
    humanRig = RigSpec(template=Mesh(verts),
                       expr_basis=BlendshapeBasis(human[:HUMAN_EXPR_DIM]),
                       jaw_basis=BlendshapeBasis(human[HUMAN_EXPR_DIM:]),
                       **common)
    animeRig = RigSpec(template=Mesh(animeVerts),
                       expr_basis=BlendshapeBasis(fields),
                       **common)
    logger.debug("synthetic rig pair: seed %d, %d vertices, rms delta %.3g",
                 spec.rng_seed, spec.vertex_count, _rms(human))
    return humanRig, animeRig


def make_random_rig(vertex_count=200,
                    expr_dim=HUMAN_EXPR_DIM,
                    jaw_dim=JAW_DIM,
                    seed=0,
                    delta_scale=0.05,
                    with_keypoints=True) -> RigSpec:
    """
    A generic rig with smooth, full-rank random deltas. `jaw_dim=0` builds a
    rig without a jaw basis.
    """
    rng = _stream(seed, 3)
    if with_keypoints:
        verts, keypoints = _template(rng, vertex_count, HUMAN_EYE_GAP)
    else:
        verts, keypoints = _face_vertices(rng, vertex_count), None
    deltas = smooth_fields(rng, verts, expr_dim + jaw_dim)
    deltas *= delta_scale / max(_rms(deltas), 1e-300)
    landmarks = {} if not with_keypoints else dict(
        keypoint_indices=keypoints,
        eyelid_pairs=EYELID_PAIRS,
        mouth_pairs=MOUTH_PAIRS,
        eye_split=EYE_SPLIT)
    return RigSpec(template=Mesh(verts),
                   expr_basis=BlendshapeBasis(deltas[:expr_dim]),
                   jaw_basis=BlendshapeBasis(deltas[expr_dim:])
                   if jaw_dim else None,
                   **landmarks)


def sample_expression_array(n, seed, r=1.0) -> np.ndarray:
    """
    `(n, 53)` samples: `psi ~ U(-r, r)^50`, `jaw ~ U(0, r/3)^3`, truncated
    to the expression clamp range.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if not r > 0:
        raise ValueError(f"sample range must be positive, got {r}")
    rng = _stream(seed, 4)
    psi = rng.uniform(-r, r, (n, HUMAN_EXPR_DIM))
    jaw = rng.uniform(0.0, r / 3, (n, JAW_DIM))
    out = np.concatenate([psi, jaw], axis=1)
    return np.clip(out, -DEFAULT_CLAMP, DEFAULT_CLAMP)


def sample_expressions(n, seed, r=1.0) -> List[ExpressionParams]:
    return [
        ExpressionParams.from_vector(row)
        for row in sample_expression_array(n, seed, r)
    ]


def as_param_array(samples) -> np.ndarray:
    """Accept a list of `ExpressionParams` or an `(n, 53)` array."""
    if len(samples) and isinstance(samples[0], ExpressionParams):
        return ExpressionParams.stack(samples)
    return as_finite_array(samples, 'expression parameters', (None, PARAM_DIM))


def oracle_labels(spec: SynthSpec, samples) -> np.ndarray:
    """Ground-truth anime coefficients `clamp01(G p + 0.5)` per sample."""
    p = as_param_array(samples)
    return np.clip(p @ spec.ground_truth.T + 0.5, 0.0, 1.0)


def param_header() -> List[str]:
    return [f'psi_{i}' for i in range(HUMAN_EXPR_DIM)
           ] + [f'jaw_{i}' for i in range(JAW_DIM)]


def label_header() -> List[str]:
    return [f'b_{j}' for j in range(ANIME_EXPR_DIM)]


def write_samples(path, samples, poses=None):
    """
    Write parameter rows. `poses`, when given, adds `pose_0..pose_2` head
    angle columns.
    """
    rows = as_param_array(samples)
    header = param_header()
    if poses is not None:
        rows = np.concatenate([rows, np.asarray(poses).reshape(-1, 3)], 1)
        header += [f'pose_{i}' for i in range(3)]
    write_csv(path, header, rows)


def read_samples(path) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Read a parameter CSV into `(params, poses or None)`."""
    header, data = read_csv(path)
    expected = param_header()
    if header[:PARAM_DIM] != expected:
        raise ArtifactError(f"{path}:1: expected columns "
                            f"{expected[0]}..{expected[-1]}")
    extra = header[PARAM_DIM:]
    if extra and extra != [f'pose_{i}' for i in range(3)]:
        raise ArtifactError(f"{path}:1: unexpected columns {extra}")
    poses = data[:, PARAM_DIM:] if extra else None
    return data[:, :PARAM_DIM], poses


def write_labels(path, labels):
    write_csv(path, label_header(), labels)


def write_ground_truth(path, spec: SynthSpec):
    write_csv(path, param_header(), spec.ground_truth)


def read_ground_truth(path) -> np.ndarray:
    header, data = read_csv(path, expected_columns=PARAM_DIM)
    if data.shape[0] != ANIME_EXPR_DIM:
        raise ArtifactError(f"{path}: expected {ANIME_EXPR_DIM} rows, got "
                            f"{data.shape[0]}")
    return data
