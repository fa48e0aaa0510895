# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #

import os

import pytest
import numpy as np

from toonrig.adapter import (AdapterMatrix, apply_adapter, fit_pose_adapter,
                             load_adapter, project_to_anime, save_adapter)
from toonrig.rig import BlendshapeBasis, RigSpec
from toonrig.runtime.utils import ArtifactError, IllPosedError, TopologyError
from toonrig.synth import SynthSpec, make_random_rig, make_rig_pair


@pytest.fixture
def human():
    return make_random_rig(vertex_count=200, seed=21)


def copy_rig(rig, deltas):
    return RigSpec(rig.template, BlendshapeBasis(deltas), None,
                   rig.keypoint_indices, rig.eyelid_pairs, rig.mouth_pairs,
                   rig.eye_split)


def keypoint_system(rig):
    d = rig.expr_basis.deltas[:, rig.keypoint_indices, :]
    return d.reshape(d.shape[0], -1).T


def test_selection_is_recovered_exactly(human):
    selection = np.random.default_rng(0).choice(50, size=17, replace=False)
    anime = copy_rig(human, human.expr_basis.deltas[selection])
    adapter = fit_pose_adapter(human, anime, lambda_reg=0.0)
    want = np.zeros((50, 17))
    want[selection, np.arange(17)] = 1.0
    assert adapter.matrix.shape == (50, 17)
    assert np.allclose(adapter.matrix, want, atol=1e-8)
    assert adapter.regularization_used == 0.0


def test_ridge_matches_normal_equations(human):
    anime = make_random_rig(vertex_count=200, expr_dim=17, jaw_dim=0, seed=8)
    # Same topology is required; reuse the human keypoint layout.
    anime = copy_rig(human, anime.expr_basis.deltas)
    lam = 1e-4
    adapter = fit_pose_adapter(human, anime, lambda_reg=lam)
    kh, ka = keypoint_system(human), keypoint_system(anime)
    want = np.linalg.solve(kh.T @ kh + lam * np.eye(50), kh.T @ ka)
    assert np.allclose(adapter.matrix, want, atol=1e-8)
    # Residuals of both solutions agree as well.
    got = np.linalg.norm(kh @ adapter.matrix - ka, axis=0)
    ref = np.linalg.norm(kh @ want - ka, axis=0)
    assert np.allclose(got, ref, atol=1e-8)


def test_vertex_fitting(human):
    selection = np.arange(17)
    anime = copy_rig(human, human.expr_basis.deltas[selection])
    adapter = fit_pose_adapter(human, anime, lambda_reg=0.0, fit_on='vertices')
    assert np.allclose(adapter.matrix[:17], np.eye(17), atol=1e-8)
    with pytest.raises(ValueError):
        fit_pose_adapter(human, anime, fit_on='faces')


def test_rank_deficient_without_ridge():
    # The synthetic human rig spans only the 17 anime fields.
    human, anime = make_rig_pair(SynthSpec(vertex_count=120, rng_seed=3))
    with pytest.raises(IllPosedError):
        fit_pose_adapter(human, anime, lambda_reg=0.0)
    adapter = fit_pose_adapter(human, anime, lambda_reg=1e-4)
    assert np.all(np.isfinite(adapter.matrix))


def test_refit_is_bit_identical():
    human, anime = make_rig_pair(SynthSpec(vertex_count=100, rng_seed=22))
    for fitOn in ('keypoints', 'vertices'):
        first = fit_pose_adapter(human, anime, 1e-3, fit_on=fitOn)
        again = fit_pose_adapter(human, anime, 1e-3, fit_on=fitOn)
        assert np.array_equal(first.matrix, again.matrix)


def test_norm_shrinks_with_regularization(human):
    anime = copy_rig(human,
                     make_random_rig(200, 17, 0, seed=9).expr_basis.deltas)
    norms = [
        np.linalg.norm(fit_pose_adapter(human, anime, lam).matrix)
        for lam in (1e-6, 1e-4, 1e-2, 1.0)
    ]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_rejects_mismatched_rigs(human):
    other = make_random_rig(vertex_count=150, expr_dim=17, jaw_dim=0, seed=1)
    with pytest.raises(TopologyError):
        fit_pose_adapter(human, other, fit_on='vertices')
    mesh_only = make_random_rig(200, 17, 0, seed=1, with_keypoints=False)
    with pytest.raises(TopologyError):
        fit_pose_adapter(human, mesh_only)
    with pytest.raises(ValueError):
        fit_pose_adapter(human, human, lambda_reg=-1.0)


def test_apply_unit_vector_returns_column():
    matrix = np.random.default_rng(4).standard_normal((50, 17))
    adapter = AdapterMatrix(matrix)
    for j in (0, 5, 16):
        e = np.zeros(17)
        e[j] = 1.0
        assert np.array_equal(apply_adapter(adapter, e), matrix[:, j])
    assert np.array_equal(apply_adapter(adapter, np.zeros(17)), np.zeros(50))
    batch = np.random.default_rng(5).uniform(0, 1, (4, 17))
    got = apply_adapter(adapter, batch)
    assert np.allclose(got, batch @ matrix.T)
    # Coefficients outside [0, 1] are accepted.
    apply_adapter(adapter, np.full(17, 1.5))
    with pytest.raises(ValueError):
        apply_adapter(adapter, np.zeros(16))


def test_project_to_anime_inverts_the_lift():
    matrix = np.random.default_rng(6).standard_normal((50, 17))
    adapter = AdapterMatrix(matrix)
    b = np.random.default_rng(7).uniform(0.1, 0.9, 17)
    got = project_to_anime(adapter, apply_adapter(adapter, b))
    assert np.allclose(got, b, atol=1e-10)
    clamped = project_to_anime(adapter, apply_adapter(adapter, 2 * b))
    assert np.all(clamped <= 1.0) and np.all(clamped >= 0.0)


def test_save_and_load(tmp_path):
    adapter = AdapterMatrix(np.random.default_rng(8).standard_normal((50, 17)),
                            1e-4)
    path = tmp_path / 'adapter.json'
    save_adapter(adapter, path)
    loaded = load_adapter(path)
    assert np.array_equal(loaded.matrix, adapter.matrix)
    assert loaded.regularization_used == 1e-4

    path.write_text('{"lambda_reg": 0.0, "columns": [[1.0, 2.0], [3.0]]}')
    with pytest.raises(ArtifactError):
        load_adapter(path)


# leave for gdb debugging
if __name__ == "__main__":
    loc = os.path.abspath(__file__)
    pytest.main([loc, "-rP"])
