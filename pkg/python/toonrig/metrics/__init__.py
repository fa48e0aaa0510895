# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from .kdr import (KdrReport, eyelid_distance, kdr_frame, kdr_sequence,
                  load_eye_pairs, read_keypoints, read_neutral, read_report,
                  shared_space_kdr, write_keypoints, write_report)
