# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
Translate human face-model expressions into anime character poses.

The package is organised by concern:

  - `toonrig.rig`: blendshape rigs, keypoints, head-angle conventions, IO.
  - `toonrig.adapter`: the linear pose adapter between the two rigs.
  - `toonrig.translator`: the translation network, its loss and training.
  - `toonrig.metrics`: the keypoint distance ratio.
  - `toonrig.synth`: seeded synthetic rigs with a known mapping.
"""
__version__ = '0.1.0'

from .runtime.utils import (ArityError, ArtifactError, DegenerateRigError,
                            IllPosedError, NonFiniteError, NumericalError,
                            TopologyError, ToonrigError, TrainingDivergedError)
from .rig import (AnimePose, BlendshapeBasis, ExpressionParams, Mesh, RigSpec,
                  extract_keypoints, load_rig, map_head_angles, save_rig,
                  synthesize_mesh)
from .adapter import (AdapterMatrix, apply_adapter, fit_pose_adapter,
                      project_to_anime)
from .translator import (GeometricLoss, LossBreakdown, TrainConfig,
                         TranslatorModel, check_gradient, forward,
                         init_model, train, translate)
from .metrics import KdrReport, kdr_frame, kdr_sequence, shared_space_kdr
from .synth import (SynthSpec, make_rig_pair, oracle_labels,
                    sample_expressions)
