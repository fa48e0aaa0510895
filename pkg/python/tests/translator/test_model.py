# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #

import json
import math
import os

import pytest
import numpy as np

from toonrig.rig import ExpressionParams
from toonrig.runtime.utils import ArtifactError, NonFiniteError
from toonrig.translator import (TranslatorModel, forward, forward_batch,
                                init_model, load_model, save_model)
from toonrig.translator.model import backward, flatten_gradients


def scalar_forward(model, x):
    """Neuron-by-neuron evaluation with plain Python floats."""
    a = [float(v) for v in x]
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = []
        for r in range(w.shape[0]):
            acc = float(b[r])
            for c in range(w.shape[1]):
                acc += float(w[r, c]) * a[c]
            z.append(acc)
        if l < model.depth - 1:
            a = [v if v > 0 else 0.2 * v for v in z]
        else:
            a = [1.0 / (1.0 + math.exp(-v)) for v in z]
    return np.array(a)


@pytest.fixture
def small():
    return init_model([53, 8, 17], seed=3)


def test_zero_output_layer_gives_half():
    model = init_model(seed=1, zero_output_layer=True)
    assert model.layer_sizes == (53, 256, 256, 17)
    rng = np.random.default_rng(0)
    for _ in range(5):
        out = forward(model, rng.uniform(-3, 3, 53))
        assert np.array_equal(out, np.full(17, 0.5))


def test_same_seed_same_model():
    a = init_model([53, 32, 17], seed=4)
    b = init_model([53, 32, 17], seed=4)
    assert np.array_equal(a.flatten(), b.flatten())
    c = init_model([53, 32, 17], seed=5)
    assert not np.array_equal(a.flatten(), c.flatten())
    assert a.parameter_count == 53 * 32 + 32 + 32 * 17 + 17
    assert np.all(a.biases[0] == 0.0)
    limit = np.sqrt(6.0 / (53 + 32))
    assert np.max(np.abs(a.weights[0])) <= limit


def test_forward_matches_scalar_loop(small):
    rng = np.random.default_rng(5)
    x = rng.uniform(-3, 3, (3, 53))
    batch, cache = forward_batch(small, x)
    assert batch.shape == (3, 17)
    assert len(cache.inputs) == 2
    for n in range(3):
        want = scalar_forward(small, x[n])
        assert np.allclose(batch[n], want, rtol=0, atol=1e-12)
        assert np.allclose(forward(small, x[n]), want, rtol=0, atol=1e-12)


def test_forward_accepts_expression_params(small):
    p = ExpressionParams(np.full(50, 0.2), np.array([0.1, 0.0, 0.0]))
    assert np.array_equal(forward(small, p), forward(small, p.vector))
    batch, _ = forward_batch(small, [p, p])
    assert np.array_equal(batch[0], batch[1])


def test_outputs_stay_in_unit_interval():
    model = init_model([53, 64, 17], seed=6)
    x = np.random.default_rng(7).uniform(-3, 3, (200, 53))
    out, _ = forward_batch(model, x)
    assert np.all((out > 0.0) & (out < 1.0))
    # Large weights saturate the logits without producing NaN.
    huge = model.with_parameters(model.flatten() * 1e3)
    out, _ = forward_batch(huge, x)
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0.0) & (out <= 1.0))


def test_rejects_bad_inputs(small):
    x = np.zeros(53)
    x[4] = np.nan
    with pytest.raises(NonFiniteError):
        forward(small, x)
    with pytest.raises(ValueError):
        forward(small, np.zeros(52))
    with pytest.raises(ValueError):
        forward(small, np.zeros((2, 53)))


def test_invalid_layer_sizes():
    with pytest.raises(ValueError):
        init_model([52, 8, 17])
    with pytest.raises(ValueError):
        init_model([53, 8, 16])
    with pytest.raises(ValueError):
        init_model([53, 0, 17])
    with pytest.raises(ValueError):
        TranslatorModel((53, 17), (np.zeros((17, 53)),), ())


def test_flatten_round_trip(small):
    theta = small.flatten()
    assert theta.shape == (small.parameter_count,)
    again = small.with_parameters(theta)
    for w, v in zip(small.weights, again.weights):
        assert np.array_equal(w, v)
    with pytest.raises(ValueError):
        small.with_parameters(theta[:-1])
    with pytest.raises(ValueError):
        small.weights[0][0, 0] = 1.0


def test_backward_matches_central_differences(small):
    x = np.random.default_rng(8).uniform(-1, 1, (4, 53))
    weights = np.random.default_rng(9).standard_normal((4, 17))
    out, cache = forward_batch(small, x)
    grad = flatten_gradients(*backward(small, cache, weights))
    theta = small.flatten()
    h = 1e-6
    for index in np.random.default_rng(10).choice(theta.size, 20,
                                                  replace=False):
        shifted = theta.copy()
        shifted[index] += h
        hi = np.sum(weights * forward_batch(small.with_parameters(shifted),
                                            x)[0])
        shifted[index] -= 2 * h
        lo = np.sum(weights * forward_batch(small.with_parameters(shifted),
                                            x)[0])
        assert abs((hi - lo) / (2 * h) - grad[index]) < 1e-6


def test_save_and_load(tmp_path, small):
    path = tmp_path / 'model.json'
    save_model(small, path)
    loaded = load_model(path)
    assert loaded.layer_sizes == small.layer_sizes
    assert np.array_equal(loaded.flatten(), small.flatten())
    x = np.random.default_rng(11).uniform(-1, 1, 53)
    assert np.array_equal(forward(loaded, x), forward(small, x))


def test_load_rejects_bad_files(tmp_path, small):
    path = tmp_path / 'model.json'
    save_model(small, path)
    doc = json.loads(path.read_text())
    doc['hidden_activation'] = 'tanh'
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_model(path)

    doc['hidden_activation'] = 'leaky_relu_0.2'
    doc['layer_sizes'] = [53, 9, 17]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_model(path)

    with pytest.raises(ArtifactError):
        load_model(tmp_path / 'missing.json')


# leave for gdb debugging
if __name__ == "__main__":
    loc = os.path.abspath(__file__)
    pytest.main([loc, "-rP"])
