# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..runtime.utils import ArtifactError, ToonrigError, atomic_write
from .core import BlendshapeBasis, Mesh, RigSpec

logger = logging.getLogger(__name__)


class RigFile(BaseModel):
    """On-disk layout of a rig. Floats are 64-bit decimals."""
    model_config = ConfigDict(extra='forbid')

    vertex_count: int = Field(ge=1)
    template: Union[List[float], List[Tuple[float, float, float]]]
    expr_deltas: List[List[Tuple[float, float, float]]]
    jaw_deltas: Optional[List[List[Tuple[float, float, float]]]] = None
    keypoint_indices: Optional[List[int]] = None
    eyelid_pairs: List[Tuple[int, int]] = []
    mouth_pairs: List[Tuple[int, int]] = []
    eye_split: Optional[int] = None


def format_validation_error(path, error: ValidationError) -> str:
    """Render pydantic errors as `path: field.sub.field: message` lines."""
    lines = []
    for e in error.errors():
        loc = '.'.join(str(p) for p in e['loc']) or '<root>'
        lines.append(f"{path}: {loc}: {e['msg']}")
    return '\n'.join(lines)


def read_model(path, schema):
    """Parse the JSON artifact at `path` with the pydantic `schema`."""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ArtifactError(f"{path}: {e.strerror}") from e
    try:
        return schema.model_validate_json(text)
    except ValidationError as e:
        raise ArtifactError(format_validation_error(path, e)) from None


def write_model(path, document: BaseModel):
    with atomic_write(path) as f:
        f.write(document.model_dump_json())
        f.write('\n')


def rig_from_document(doc: RigFile, source='<rig>') -> RigSpec:
    template = np.asarray(doc.template, dtype=np.float64).reshape(-1)
    if template.size != 3 * doc.vertex_count:
        raise ArtifactError(f"{source}: template: {template.size} values for "
                            f"{doc.vertex_count} vertices")
    try:
        jaw = None if doc.jaw_deltas is None else BlendshapeBasis(
            doc.jaw_deltas)
        return RigSpec(template=Mesh(template.reshape(-1, 3)),
                       expr_basis=BlendshapeBasis(doc.expr_deltas),
                       jaw_basis=jaw,
                       keypoint_indices=doc.keypoint_indices,
                       eyelid_pairs=doc.eyelid_pairs,
                       mouth_pairs=doc.mouth_pairs,
                       eye_split=doc.eye_split)
    except (ToonrigError, ValueError) as e:
        raise ArtifactError(f"{source}: {e}") from e


def rig_to_document(rig: RigSpec) -> RigFile:
    return RigFile(
        vertex_count=rig.vertex_count,
        template=rig.template.vertices.reshape(-1).tolist(),
        expr_deltas=rig.expr_basis.deltas.tolist(),
        jaw_deltas=None
        if rig.jaw_basis is None else rig.jaw_basis.deltas.tolist(),
        keypoint_indices=None
        if not rig.has_keypoints else rig.keypoint_indices.tolist(),
        eyelid_pairs=[tuple(p) for p in rig.eyelid_pairs.tolist()],
        mouth_pairs=[tuple(p) for p in rig.mouth_pairs.tolist()],
        eye_split=rig.eye_split)


def load_rig(path) -> RigSpec:
    """Load and validate a rig JSON file."""
    rig = rig_from_document(read_model(path, RigFile), source=str(path))
    logger.debug("loaded rig %s: %d vertices, %d expression dims", path,
                 rig.vertex_count, rig.expr_basis.dim)
    return rig


def save_rig(rig: RigSpec, path):
    write_model(path, rig_to_document(rig))


def export_obj(mesh: Mesh, path):
    """
    Write `mesh` as a vertices-only Wavefront OBJ file with 9 significant
    digits per coordinate.
    """
    with atomic_write(path) as f:
        for x, y, z in mesh.vertices.tolist():
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
