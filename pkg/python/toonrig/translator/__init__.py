# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from .model import (DEFAULT_LAYER_SIZES, TranslatorModel, forward,
                    forward_batch, init_model, load_model, save_model)
from .losses import (DEFAULT_LAMBDA_VER, GeometricLoss, LossBreakdown,
                     loss_closure, loss_landmark, loss_total, loss_vertex)
from .gradcheck import GradCheckReport, check_gradient
from .train import (TrainConfig, load_train_config, read_history, train,
                    write_history)
from .translate import Translation, translate, write_translation
