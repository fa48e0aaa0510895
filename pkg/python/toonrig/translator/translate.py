# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..adapter.pose_adapter import AdapterMatrix, apply_adapter
from ..rig.angles import IDENTITY, AngleConvention, map_head_angles
from ..rig.core import ANIME_EXPR_DIM, HUMAN_EXPR_DIM, AnimePose
from ..runtime.utils import write_csv
from .model import TranslatorModel, forward_batch
from .train import as_dataset


@dataclass
class Translation:
    """Per-row network outputs `b`, their lift `psi_hat` and head angles."""
    b: np.ndarray
    psi_hat: np.ndarray
    h: Optional[np.ndarray] = None

    def poses(self) -> List[AnimePose]:
        h = np.zeros((len(self.b), 3)) if self.h is None else self.h
        return [AnimePose(b, angles) for b, angles in zip(self.b, h)]


def translate(model: TranslatorModel,
              adapter: AdapterMatrix,
              params,
              head_angles=None,
              convention: AngleConvention = IDENTITY) -> Translation:
    """
    Run the translation pipeline on a batch of human parameters: the network
    gives `b`, the adapter lifts it to `psi_hat`, and head angles, when given,
    pass through `map_head_angles`.
    """
    data = as_dataset(params)
    b, _ = forward_batch(model, data)
    h = None
    if head_angles is not None:
        h = map_head_angles(np.asarray(head_angles).reshape(-1, 3), convention)
        if len(h) != len(b):
            raise ValueError(f"{len(h)} head-angle rows for {len(b)} "
                             f"parameter rows")
    return Translation(b, apply_adapter(adapter, b), h)


def write_translation(path, result: Translation):
    header = [f'b_{j}' for j in range(ANIME_EXPR_DIM)
             ] + [f'psi_hat_{i}' for i in range(HUMAN_EXPR_DIM)]
    columns = [result.b, result.psi_hat]
    if result.h is not None:
        header += [f'h_{i}' for i in range(3)]
        columns.append(result.h)
    write_csv(path, header, np.concatenate(columns, axis=1))
