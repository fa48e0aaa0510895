# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
Keypoint distance ratio (KDR).

For each eye, the closure ratio of a frame is its eyelid distance divided by
the eyelid distance of the same domain's neutral pose. KDR is the mean over
the two eyes of the absolute difference between the driving and predicted
ratios. Normalising per domain makes the metric blind to differences in
absolute lid geometry between the two faces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..rig.core import (HUMAN_EXPR_DIM, JAW_DIM, KEYPOINT_COUNT, RigSpec,
                        closure_offsets, extract_keypoints,
                        extract_keypoints_batch, synthesize_meshes)
from ..rig.io import read_model
from ..runtime.utils import (ArtifactError, DegenerateRigError,
                             TopologyError, atomic_write, read_csv, write_csv)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KdrReport:
    per_frame: np.ndarray
    mean: float
    frame_count: int


def _keypoints(values, name, batched=False):
    arr = np.asarray(values, dtype=np.float64)
    want = (KEYPOINT_COUNT, 3)
    if arr.shape[-2:] != want or arr.ndim != (3 if batched else 2):
        raise TopologyError(f"{name} has shape {arr.shape}, expected "
                            f"{'(n, ' if batched else '('}"
                            f"{KEYPOINT_COUNT}, 3)")
    return arr


def eyelid_distance(keypoints, pairs) -> float:
    """
    Mean over the given `(upper, lower)` pairs of the l1 distance between
    the two lid keypoints. Leading batch axes are preserved.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise DegenerateRigError("an eye needs at least one eyelid pair")
    dist = closure_offsets(keypoints, pairs).sum(axis=-1).mean(axis=-1)
    return float(dist) if np.ndim(dist) == 0 else dist


def _ratios(keypoints, neutral, eye, domain):
    base = eyelid_distance(neutral, eye)
    if not base > 0:
        raise DegenerateRigError(f"{domain} neutral eyelid distance is "
                                 f"{base}; the ratio is undefined")
    return eyelid_distance(keypoints, eye) / base


def kdr_frame(driving_k, predicted_k, driving_neutral_k, predicted_neutral_k,
              eyes) -> float:
    """
    KDR of one frame.

    Args:
      driving_k: 68 driving keypoints.
      predicted_k: 68 predicted keypoints.
      driving_neutral_k: Driving-domain neutral keypoints.
      predicted_neutral_k: Predicted-domain neutral keypoints.
      eyes: The eyelid pair sets of the two eyes.

    Returns:
      float: `mean_e |r_d(e) - r_p(e)|`, nonnegative.

    Raises:
      DegenerateRigError: if a neutral eyelid distance is zero or an eye has
        no pairs.
    """
    return float(
        _kdr(_keypoints(driving_k, 'driving keypoints'),
             _keypoints(predicted_k, 'predicted keypoints'),
             _keypoints(driving_neutral_k, 'driving neutral'),
             _keypoints(predicted_neutral_k, 'predicted neutral'), eyes))


def _kdr(driving, predicted, driving_neutral, predicted_neutral, eyes):
    if len(eyes) == 0:
        raise DegenerateRigError("no eyes to measure")
    gaps = []
    for eye in eyes:
        rd = _ratios(driving, driving_neutral, eye, 'driving')
        rp = _ratios(predicted, predicted_neutral, eye, 'predicted')
        gaps.append(np.abs(rd - rp))
    return np.mean(gaps, axis=0)


def kdr_sequence(driving, predicted, driving_neutral, predicted_neutral,
                 eyes) -> KdrReport:
    """Per-frame KDR over a clip plus its arithmetic mean."""
    driving = _keypoints(driving, 'driving sequence', batched=True)
    predicted = _keypoints(predicted, 'predicted sequence', batched=True)
    if len(driving) != len(predicted):
        raise TopologyError(f"{len(driving)} driving frames but "
                            f"{len(predicted)} predicted frames")
    if len(driving) == 0:
        raise TopologyError("a sequence needs at least one frame")
    perFrame = np.atleast_1d(
        _kdr(driving, predicted,
             _keypoints(driving_neutral, 'driving neutral'),
             _keypoints(predicted_neutral, 'predicted neutral'), eyes))
    report = KdrReport(perFrame, float(np.mean(perFrame)), len(perFrame))
    logger.debug("KDR over %d frames: %.6g", report.frame_count, report.mean)
    return report


def shared_space_kdr(human_rig: RigSpec, driving_params,
                     predicted_psi) -> KdrReport:
    """
    KDR with both sides realised on `human_rig`: the driving frames under
    `p = [psi; jaw]`, the predictions under `psi_hat` with zero jaw. Both
    sides share the human neutral.
    """
    p = np.asarray(driving_params, dtype=np.float64).reshape(
        -1, HUMAN_EXPR_DIM + JAW_DIM)
    psiHat = np.asarray(predicted_psi, dtype=np.float64).reshape(
        -1, HUMAN_EXPR_DIM)
    driving = extract_keypoints_batch(
        human_rig,
        synthesize_meshes(human_rig, p[:, :HUMAN_EXPR_DIM],
                          p[:, HUMAN_EXPR_DIM:]))
    predicted = extract_keypoints_batch(
        human_rig,
        synthesize_meshes(human_rig, psiHat, np.zeros((len(psiHat), JAW_DIM))))
    neutral = extract_keypoints(human_rig, human_rig.template)
    return kdr_sequence(driving, predicted, neutral, neutral,
                        human_rig.eye_pair_sets())


class PairsFile(BaseModel):
    """Eyelid pair layout for evaluating detector keypoints."""
    model_config = ConfigDict(extra='forbid')

    eyelid_pairs: List[Tuple[int, int]]
    eye_split: Optional[int] = None


def load_eye_pairs(path) -> Tuple[np.ndarray, np.ndarray]:
    doc = read_model(path, PairsFile)
    pairs = np.asarray(doc.eyelid_pairs, dtype=np.int64).reshape(-1, 2)
    split = len(pairs) // 2 if doc.eye_split is None else doc.eye_split
    if not 0 < split < len(pairs):
        raise ArtifactError(f"{path}: eye_split {split} must leave pairs for "
                            f"both eyes")
    if np.any(pairs < 0) or np.any(pairs >= KEYPOINT_COUNT):
        raise ArtifactError(f"{path}: eyelid pair outside 0..67")
    return pairs[:split], pairs[split:]


def keypoint_header() -> List[str]:
    return [
        f'k{slot}_{axis}' for slot in range(KEYPOINT_COUNT) for axis in 'xyz'
    ]


def write_keypoints(path, frames):
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, KEYPOINT_COUNT,
                                                          3)
    write_csv(path, keypoint_header(), frames.reshape(len(frames), -1))


def read_keypoints(path) -> np.ndarray:
    """Read a keypoint CSV (one frame per row) into `(n, 68, 3)`."""
    _, data = read_csv(path, expected_columns=3 * KEYPOINT_COUNT)
    if len(data) == 0:
        raise ArtifactError(f"{path}: no keypoint rows")
    return data.reshape(-1, KEYPOINT_COUNT, 3)


def read_neutral(path) -> np.ndarray:
    frames = read_keypoints(path)
    if len(frames) != 1:
        raise ArtifactError(f"{path}: a neutral file holds exactly one row, "
                            f"got {len(frames)}")
    return frames[0]


def write_report(path, report: KdrReport):
    """Write `frame,kdr` rows followed by a final `mean` row."""
    with atomic_write(path) as f:
        f.write('frame,kdr\n')
        for i, value in enumerate(report.per_frame.tolist()):
            f.write(f'{i},{value:.17g}\n')
        f.write(f'mean,{report.mean:.17g}\n')


def read_report(path) -> KdrReport:
    try:
        lines = [
            l for l in Path(path).read_text(encoding='utf-8').splitlines()
            if l.strip()
        ]
    except OSError as e:
        raise ArtifactError(f"{path}: {e.strerror}") from e
    if not lines or lines[0] != 'frame,kdr' or not lines[-1].startswith(
            'mean,'):
        raise ArtifactError(f"{path}: not a KDR report")
    try:
        values = [float(l.split(',')[1]) for l in lines[1:-1]]
        mean = float(lines[-1].split(',')[1])
    except (IndexError, ValueError):
        raise ArtifactError(f"{path}: malformed KDR row") from None
    return KdrReport(np.asarray(values), mean, len(values))
