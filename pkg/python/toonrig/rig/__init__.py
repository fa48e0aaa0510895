# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from .core import (ANIME_EXPR_DIM, ANIME_SLOT_NAMES, DEFAULT_CLAMP,
                   HUMAN_EXPR_DIM, JAW_DIM, KEYPOINT_COUNT, AnimePose,
                   BlendshapeBasis, ExpressionParams, Mesh, RigSpec,
                   closure_offsets, extract_keypoints, extract_keypoints_batch,
                   synthesize_mesh, synthesize_meshes)
from .angles import AXIS_NAMES, IDENTITY, AngleConvention, map_head_angles
from .io import export_obj, load_rig, save_rig
