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

from toonrig.rig import Mesh, export_obj, load_rig, save_rig, synthesize_mesh
from toonrig.runtime.utils import ArtifactError, read_csv, write_csv
from toonrig.synth import make_random_rig


def test_save_and_load_preserve_rig(tmp_path):
    rig = make_random_rig(vertex_count=90, seed=5)
    path = tmp_path / 'rig.json'
    save_rig(rig, path)
    loaded = load_rig(path)
    assert np.array_equal(loaded.template.vertices, rig.template.vertices)
    assert np.array_equal(loaded.expr_basis.deltas, rig.expr_basis.deltas)
    assert np.array_equal(loaded.jaw_basis.deltas, rig.jaw_basis.deltas)
    assert np.array_equal(loaded.keypoint_indices, rig.keypoint_indices)
    assert np.array_equal(loaded.eyelid_pairs, rig.eyelid_pairs)
    assert loaded.eye_split == rig.eye_split


def test_malformed_json_names_the_file(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"vertex_count": 3, "template": [')
    with pytest.raises(ArtifactError) as e:
        load_rig(path)
    assert 'broken.json' in str(e.value)


def test_unknown_and_inconsistent_fields(tmp_path):
    path = tmp_path / 'rig.json'
    doc = {
        'vertex_count': 1,
        'template': [0.0, 0.0, 0.0],
        'expr_deltas': [[[1.0, 0.0, 0.0]]],
        'colour': 'red'
    }
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError) as e:
        load_rig(path)
    assert 'colour' in str(e.value)

    del doc['colour']
    doc['vertex_count'] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_rig(path)


def test_mesh_only_rig_file(tmp_path):
    path = tmp_path / 'rig.json'
    path.write_text(
        json.dumps({
            'vertex_count': 1,
            'template': [[0.0, 1.0, 2.0]],
            'expr_deltas': [[[1.0, 0.0, 0.0]]]
        }))
    rig = load_rig(path)
    mesh = synthesize_mesh(rig, [2.0])
    assert np.array_equal(mesh.vertices, [[2.0, 1.0, 2.0]])


def test_export_obj(tmp_path):
    path = tmp_path / 'mesh.obj'
    export_obj(Mesh(np.array([[0.0, 1.0, 2.0], [0.125, -3.5, 1e-3]])), path)
    lines = path.read_text().splitlines()
    assert lines == ['v 0 1 2', 'v 0.125 -3.5 0.001']


def test_csv_diagnostics(tmp_path):
    path = tmp_path / 'rows.csv'
    write_csv(path, ['a', 'b'], [[1.0, 2.0], [3.0, 4.0]])
    header, data = read_csv(path)
    assert header == ['a', 'b']
    assert np.array_equal(data, [[1.0, 2.0], [3.0, 4.0]])

    path.write_text('a,b\n1,2\n3,oops\n')
    with pytest.raises(ArtifactError) as e:
        read_csv(path)
    assert 'rows.csv:3' in str(e.value)
    assert "'b'" in str(e.value)


# leave for gdb debugging
if __name__ == "__main__":
    loc = os.path.abspath(__file__)
    pytest.main([loc, "-rP"])
