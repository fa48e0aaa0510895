# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from .pose_adapter import (DEFAULT_LAMBDA_REG, AdapterMatrix, apply_adapter,
                           fit_pose_adapter, load_adapter, project_to_anime,
                           save_adapter)
