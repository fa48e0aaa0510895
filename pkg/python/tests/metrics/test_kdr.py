# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #

import json
import os

import pytest
import numpy as np

from toonrig.metrics import (eyelid_distance, kdr_frame, kdr_sequence,
                             load_eye_pairs, read_keypoints, read_neutral,
                             read_report, shared_space_kdr, write_keypoints,
                             write_report)
from toonrig.runtime.utils import (ArtifactError, DegenerateRigError,
                                   TopologyError)
from toonrig.synth import (EYELID_PAIRS, canonical_landmarks, make_random_rig,
                           sample_expression_array)

EYES = (EYELID_PAIRS[:3], EYELID_PAIRS[3:])


def set_gap(keypoints, gap, eye=None):
    """Move lower lids so that every pair of `eye` (or both) is `gap` apart."""
    out = np.array(keypoints)
    for pairs in (EYES if eye is None else (EYES[eye],)):
        for upper, lower in pairs:
            out[lower] = out[upper] - (0.0, gap, 0.0)
    return out


def random_frames(n, seed):
    rng = np.random.default_rng(seed)
    neutral = canonical_landmarks()
    frames = neutral + rng.normal(0.0, 0.003, (n, 68, 3))
    return frames, neutral


def brute_force_kdr(driving, predicted, dn, pn):
    gaps = []
    for eye in EYES:
        ratios = []
        for k, n in ((driving, dn), (predicted, pn)):
            d = sum(np.abs(k[u] - k[l]).sum() for u, l in eye) / len(eye)
            base = sum(np.abs(n[u] - n[l]).sum() for u, l in eye) / len(eye)
            ratios.append(d / base)
        gaps.append(abs(ratios[0] - ratios[1]))
    return sum(gaps) / len(gaps)


def test_eyelid_distance():
    k = canonical_landmarks(0.04)
    assert eyelid_distance(k, EYES[0]) == pytest.approx(0.04, abs=1e-15)
    assert eyelid_distance(k, EYES[1]) == pytest.approx(0.04, abs=1e-15)
    batch = np.stack([k, set_gap(k, 0.01)])
    assert np.allclose(eyelid_distance(batch, EYES[0]), [0.04, 0.01])
    with pytest.raises(DegenerateRigError):
        eyelid_distance(k, [])


def test_identical_frames_score_zero():
    k = canonical_landmarks()
    assert kdr_frame(k, k, k, k, EYES) == 0.0
    frames, neutral = random_frames(1, seed=1)
    assert kdr_frame(frames[0], frames[0], neutral, neutral, EYES) == 0.0


def test_closed_against_neutral():
    neutral = canonical_landmarks()
    closed = set_gap(neutral, 0.0)
    assert kdr_frame(closed, neutral, neutral, neutral,
                     EYES) == pytest.approx(1.0, abs=1e-12)
    # Only one eye closed: the mean over eyes halves the gap.
    half = set_gap(neutral, 0.0, eye=0)
    assert kdr_frame(half, neutral, neutral, neutral,
                     EYES) == pytest.approx(0.5, abs=1e-12)


def test_doubled_lids():
    neutral = canonical_landmarks(0.04)
    wide = set_gap(neutral, 0.08)
    assert abs(kdr_frame(neutral, wide, neutral, neutral, EYES) -
               1.0) < 1e-10


def test_ratios_ignore_domain_scale():
    frames, neutral = random_frames(2, seed=2)
    base = kdr_frame(frames[0], frames[1], neutral, neutral, EYES)
    scaled = kdr_frame(frames[0], 3.0 * frames[1], neutral, 3.0 * neutral,
                       EYES)
    assert scaled == pytest.approx(base, abs=1e-12)
    # Predicted neutral with a different absolute lid gap.
    animeNeutral = set_gap(neutral, 0.08)
    animeFrame = set_gap(neutral, 0.04)
    humanFrame = set_gap(neutral, 0.02)
    assert kdr_frame(humanFrame, animeFrame, neutral, animeNeutral,
                     EYES) == pytest.approx(0.0, abs=1e-12)


def test_symmetric_and_matches_loops():
    frames, neutral = random_frames(4, seed=3)
    other = set_gap(neutral, 0.05)
    for n in range(4):
        a = kdr_frame(frames[n], other, neutral, neutral, EYES)
        b = kdr_frame(other, frames[n], neutral, neutral, EYES)
        assert a == pytest.approx(b, abs=1e-15)
        assert a >= 0
        want = brute_force_kdr(frames[n], other, neutral, neutral)
        assert a == pytest.approx(want, abs=1e-12)


def test_sequence_mean():
    driving, neutral = random_frames(10, seed=4)
    predicted, _ = random_frames(10, seed=5)
    report = kdr_sequence(driving, predicted, neutral, neutral, EYES)
    assert report.frame_count == 10
    single = [
        kdr_frame(driving[n], predicted[n], neutral, neutral, EYES)
        for n in range(10)
    ]
    assert np.allclose(report.per_frame, single, atol=1e-15)
    assert report.mean == pytest.approx(sum(single) / 10, abs=1e-15)

    with pytest.raises(TopologyError):
        kdr_sequence(driving, predicted[:9], neutral, neutral, EYES)
    with pytest.raises(TopologyError):
        kdr_sequence(driving[:0], predicted[:0], neutral, neutral, EYES)
    with pytest.raises(TopologyError):
        kdr_sequence(driving[:, :67], predicted[:, :67], neutral, neutral,
                     EYES)


def test_degenerate_neutral():
    neutral = canonical_landmarks()
    flat = set_gap(neutral, 0.0)
    with pytest.raises(DegenerateRigError):
        kdr_frame(neutral, neutral, flat, neutral, EYES)
    with pytest.raises(DegenerateRigError):
        kdr_frame(neutral, neutral, neutral, flat, EYES)
    with pytest.raises(DegenerateRigError):
        kdr_frame(neutral, neutral, neutral, neutral, ())


def test_shared_space_perfect_prediction():
    rig = make_random_rig(vertex_count=150, seed=91)
    params = sample_expression_array(5, seed=92)
    params[:, 50:] = 0.0
    report = shared_space_kdr(rig, params, params[:, :50])
    assert report.frame_count == 5
    assert report.mean == pytest.approx(0.0, abs=1e-12)
    moved = shared_space_kdr(rig, params, np.zeros((5, 50)))
    assert moved.mean > 0


def test_report_files(tmp_path):
    driving, neutral = random_frames(3, seed=6)
    predicted, _ = random_frames(3, seed=7)
    report = kdr_sequence(driving, predicted, neutral, neutral, EYES)
    path = tmp_path / 'kdr.csv'
    write_report(path, report)
    lines = path.read_text().splitlines()
    assert lines[0] == 'frame,kdr'
    assert lines[-1].startswith('mean,')
    loaded = read_report(path)
    assert np.array_equal(loaded.per_frame, report.per_frame)
    assert loaded.mean == report.mean

    path.write_text('frame,kdr\n0,0.5\n')
    with pytest.raises(ArtifactError):
        read_report(path)


def test_keypoint_files(tmp_path):
    frames, neutral = random_frames(2, seed=8)
    path = tmp_path / 'k.csv'
    write_keypoints(path, frames)
    assert np.array_equal(read_keypoints(path), frames)
    with pytest.raises(ArtifactError):
        read_neutral(path)
    write_keypoints(path, neutral)
    assert np.array_equal(read_neutral(path), neutral)


def test_eye_pair_files(tmp_path):
    path = tmp_path / 'pairs.json'
    path.write_text(json.dumps({'eyelid_pairs': [[36, 41], [42, 47]]}))
    first, second = load_eye_pairs(path)
    assert first.tolist() == [[36, 41]] and second.tolist() == [[42, 47]]
    path.write_text(json.dumps({'eyelid_pairs': [[36, 41]], 'eye_split': 1}))
    with pytest.raises(ArtifactError):
        load_eye_pairs(path)
    path.write_text(json.dumps({'eyelid_pairs': [[36, 68], [42, 47]]}))
    with pytest.raises(ArtifactError):
        load_eye_pairs(path)


# leave for gdb debugging
if __name__ == "__main__":
    loc = os.path.abspath(__file__)
    pytest.main([loc, "-rP"])
