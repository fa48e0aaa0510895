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

from toonrig.adapter import AdapterMatrix, apply_adapter
from toonrig.rig import ExpressionParams, Mesh, synthesize_mesh
from toonrig.runtime.utils import TopologyError
from toonrig.synth import (EYELID_PAIRS, MOUTH_PAIRS, make_random_rig,
                           sample_expression_array)
from toonrig.translator import (GeometricLoss, check_gradient, forward_batch,
                                init_model, loss_closure, loss_landmark,
                                loss_total, loss_vertex)


@pytest.fixture(scope='module')
def human():
    return make_random_rig(vertex_count=120, seed=31)


@pytest.fixture(scope='module')
def adapter():
    return AdapterMatrix(
        np.random.default_rng(32).standard_normal((50, 17)) * 0.5)


@pytest.fixture(scope='module')
def params():
    return sample_expression_array(4, seed=33, r=0.5)


def random_keypoints(seed):
    return np.random.default_rng(seed).uniform(-1, 1, (68, 3))


def test_landmark_unit_shift():
    target = random_keypoints(0)
    pred = target.copy()
    pred[:, 0] += 1.0
    assert loss_landmark(pred, target) == pytest.approx(68.0, abs=1e-12)
    assert loss_landmark(target, target) == 0.0


def test_landmark_brute_force():
    pred, target = random_keypoints(1), random_keypoints(2)
    want = 0.0
    for s in range(68):
        for c in range(3):
            want += abs(pred[s, c] - target[s, c])
    assert loss_landmark(pred, target) == pytest.approx(want, abs=1e-12)
    with pytest.raises(TopologyError):
        loss_landmark(pred[:67], target)


def test_closure_single_pair():
    target = np.zeros((68, 3))
    pred = np.zeros((68, 3))
    pred[0, 1] = 1.0
    assert loss_closure(pred, target, [(0, 1)], []) == pytest.approx(1.0)
    # Offsets of opposite sign have the same magnitude.
    pred[0, 1] = -1.0
    target[1, 1] = -1.0
    assert loss_closure(pred, target, [(0, 1)], []) == 0.0


def test_closure_translation_invariant():
    pred, target = random_keypoints(3), random_keypoints(4)
    base = loss_closure(pred, target, EYELID_PAIRS, MOUTH_PAIRS)
    shift = np.array([0.3, -1.2, 5.0])
    assert loss_closure(pred + shift, target, EYELID_PAIRS,
                        MOUTH_PAIRS) == pytest.approx(base, abs=1e-12)
    assert loss_closure(pred, target - shift, EYELID_PAIRS,
                        MOUTH_PAIRS) == pytest.approx(base, abs=1e-12)
    assert loss_closure(target, target, EYELID_PAIRS, MOUTH_PAIRS) == 0.0
    with pytest.raises(TopologyError):
        loss_closure(pred, target, [(0, 68)], MOUTH_PAIRS)


def test_vertex_single_vertex():
    pred = Mesh(np.array([[1.0, 1.0, 1.0]]))
    target = Mesh(np.zeros((1, 3)))
    assert loss_vertex(pred, target) == 1.0
    assert loss_vertex(np.array([[3.0, 0.0, 0.0]]), np.zeros((1, 3))) == 3.0


def test_vertex_brute_force():
    rng = np.random.default_rng(5)
    pred, target = rng.standard_normal((200, 3)), rng.standard_normal((200, 3))
    acc = 0.0
    for v in range(200):
        for c in range(3):
            acc += (pred[v, c] - target[v, c])**2
    assert loss_vertex(pred, target) == pytest.approx(acc / 600, rel=1e-12)
    with pytest.raises(TopologyError):
        loss_vertex(pred[:199], target)


def test_evaluate_matches_standalone_terms(human, adapter, params):
    model = init_model([53, 16, 17], seed=34)
    loss = GeometricLoss(human, adapter, lambda_ver=100.0)
    ev = loss.evaluate(model, params)
    bHat, _ = forward_batch(model, params)
    lm, cl, ver = [], [], []
    for n in range(len(params)):
        target = synthesize_mesh(human, params[n, :50], params[n, 50:])
        pred = synthesize_mesh(human, apply_adapter(adapter, bHat[n]),
                               np.zeros(3))
        kT = target.vertices[human.keypoint_indices]
        kP = pred.vertices[human.keypoint_indices]
        lm.append(loss_landmark(kP, kT))
        cl.append(loss_closure(kP, kT, EYELID_PAIRS, MOUTH_PAIRS))
        ver.append(loss_vertex(pred, target))
    b = ev.breakdown
    assert b.l_lm == pytest.approx(np.mean(lm), rel=1e-10)
    assert b.l_closure == pytest.approx(np.mean(cl), rel=1e-10)
    assert b.l_ver == pytest.approx(np.mean(ver), rel=1e-10)
    assert np.mean(ev.per_sample) == pytest.approx(b.l_total, rel=1e-12)


@pytest.mark.parametrize('lambda_ver', [0.0, 1.0, 100.0, 1e4])
@pytest.mark.parametrize('use_landmark', [True, False])
@pytest.mark.parametrize('use_closure', [True, False])
def test_total_recomposes(human, adapter, params, lambda_ver, use_landmark,
                          use_closure):
    model = init_model([53, 16, 17], seed=35)
    loss = GeometricLoss(human,
                         adapter,
                         lambda_ver,
                         use_landmark=use_landmark,
                         use_closure=use_closure)
    b = loss.breakdown(model, params)
    want = (use_landmark * b.l_lm + use_closure * b.l_closure +
            lambda_ver * b.l_ver)
    assert abs(b.l_total - want) <= 1e-12 * max(1.0, abs(want))
    assert b.l_lm >= 0 and b.l_closure >= 0 and b.l_ver >= 0


def test_default_total_over_random_configurations(human, adapter):
    rng = np.random.default_rng(38)
    loss = GeometricLoss(human, adapter)
    for trial in range(1000):
        model = init_model([53, 4, 17], seed=trial)
        p = sample_expression_array(1, seed=trial, r=rng.uniform(0.1, 3.0))
        b = loss.breakdown(model, p)
        want = b.l_lm + b.l_closure + 100.0 * b.l_ver
        assert abs(b.l_total - want) <= 1e-9 * max(1.0, abs(want))


def test_zero_lambda_drops_vertex_term(human, adapter, params):
    model = init_model([53, 16, 17], seed=36)
    b = GeometricLoss(human, adapter, lambda_ver=0.0).breakdown(model, params)
    assert b.l_ver > 0
    assert b.l_total == pytest.approx(b.l_lm + b.l_closure, rel=1e-14)


def test_zero_gradient_at_exact_minimum(human, adapter):
    model = init_model([53, 16, 17], seed=37, zero_output_layer=True)
    psi = apply_adapter(adapter, np.full((1, 17), 0.5))[0]
    params = np.concatenate([psi, np.zeros(3)])[None, :]
    loss = GeometricLoss(human, adapter, lambda_ver=100.0)
    breakdown, grad = loss.value_and_gradient(model, params)
    assert breakdown.l_total == 0.0
    assert np.all(grad == 0.0)


def test_gradient_scales_with_lambda(human, adapter, params):
    model = init_model([53, 16, 17], seed=38)
    grads = []
    for lam in (1.0, 2.0):
        loss = GeometricLoss(human,
                             adapter,
                             lam,
                             use_landmark=False,
                             use_closure=False)
        grads.append(loss.value_and_gradient(model, params)[1])
    assert np.any(grads[0] != 0.0)
    assert np.allclose(grads[1], 2.0 * grads[0], rtol=1e-13, atol=0.0)


@pytest.mark.parametrize('use_landmark,use_closure,lambda_ver',
                         [(True, True, 100.0), (False, False, 100.0),
                          (True, False, 0.0), (False, True, 0.0)])
def test_gradient_matches_finite_differences(human, adapter, params,
                                             use_landmark, use_closure,
                                             lambda_ver):
    model = init_model([53, 16, 17], seed=39)
    loss = GeometricLoss(human,
                         adapter,
                         lambda_ver,
                         use_landmark=use_landmark,
                         use_closure=use_closure)
    report = check_gradient(loss, model, params, probes=100, seed=40)
    assert report.probed > 0
    assert report.passed, report


def test_loss_total_single_sample(human, adapter, params):
    model = init_model([53, 16, 17], seed=41)
    p = ExpressionParams.from_vector(params[0])
    single = loss_total(p, model, adapter, human)
    batch = GeometricLoss(human, adapter).breakdown(model, params[:1])
    assert single == batch
    assert loss_total(params[0], model, adapter, human) == batch


def test_rejects_incompatible_inputs(human, adapter):
    with pytest.raises(TopologyError):
        GeometricLoss(human, AdapterMatrix(np.zeros((40, 17))))
    anime = make_random_rig(vertex_count=120, expr_dim=16, jaw_dim=0, seed=1)
    with pytest.raises(TopologyError):
        GeometricLoss(human, adapter, anime_rig=anime)
    mesh_only = make_random_rig(vertex_count=80, seed=2, with_keypoints=False)
    with pytest.raises(TopologyError):
        GeometricLoss(mesh_only, adapter)
    with pytest.raises(ValueError):
        GeometricLoss(human, adapter, lambda_ver=-1.0)


# leave for gdb debugging
if __name__ == "__main__":
    loc = os.path.abspath(__file__)
    pytest.main([loc, "-rP"])
