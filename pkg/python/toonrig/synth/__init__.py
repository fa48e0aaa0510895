# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from .data import (EYE_SPLIT, EYELID_PAIRS, MOUTH_PAIRS, PARAM_DIM, SynthSpec,
                   canonical_landmarks, make_random_rig, make_rig_pair,
                   oracle_labels, read_ground_truth, read_samples,
                   sample_expression_array, sample_expressions, write_labels,
                   write_ground_truth, write_samples)
