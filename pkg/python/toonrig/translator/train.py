# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from ..adapter.pose_adapter import AdapterMatrix
from ..rig.core import (ANIME_EXPR_DIM, DEFAULT_CLAMP, RigSpec,
                        ExpressionParams)
from ..rig.io import read_model
from ..runtime.utils import (ArtifactError, NumericalError,
                             TrainingDivergedError, as_finite_array,
                             read_csv, write_csv)
from .losses import DEFAULT_LAMBDA_VER, GeometricLoss, LossBreakdown
from .model import DEFAULT_LAYER_SIZES, INPUT_DIM, TranslatorModel

logger = logging.getLogger(__name__)

HISTORY_HEADER = ['epoch', 'l_lm', 'l_closure', 'l_ver', 'l_total']


class TrainConfig(BaseModel):
    """
    Hyperparameters of a training run. Unknown keys are rejected, so a JSON
    config file must use these field names exactly.
    """
    model_config = ConfigDict(extra='forbid')

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=512, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    lambda_ver: float = Field(default=DEFAULT_LAMBDA_VER, ge=0)
    rng_seed: int = 0
    dataset_size: int = Field(default=8192, ge=1)
    layer_sizes: List[int] = list(DEFAULT_LAYER_SIZES)
    use_landmark: bool = True
    use_closure: bool = True
    progress: bool = False

    @field_validator('layer_sizes')
    @classmethod
    def _check_layers(cls, sizes):
        if len(sizes) < 2 or sizes[0] != INPUT_DIM or \
                sizes[-1] != ANIME_EXPR_DIM or min(sizes) < 1:
            raise ValueError(f"layer sizes must run from {INPUT_DIM} to "
                             f"{ANIME_EXPR_DIM}, got {sizes}")
        return sizes

    def make_loss(self, human_rig, adapter, anime_rig=None) -> GeometricLoss:
        return GeometricLoss(human_rig,
                             adapter,
                             self.lambda_ver,
                             use_landmark=self.use_landmark,
                             use_closure=self.use_closure,
                             anime_rig=anime_rig)


def load_train_config(path, **overrides) -> TrainConfig:
    """Read a JSON config; `overrides` that are not None replace its values."""
    base = read_model(path, TrainConfig) if path is not None else TrainConfig()
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return base
    return TrainConfig.model_validate({**base.model_dump(), **updates})


class AdamState:
    """
    First and second moment estimates of the Adam optimizer over a flat
    parameter vector, with bias correction.
    """

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad, learning_rate):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mHat = self.m / (1.0 - self.beta1**self.t)
        vHat = self.v / (1.0 - self.beta2**self.t)
        return theta - learning_rate * mHat / (np.sqrt(vHat) + self.eps)


def as_dataset(dataset) -> np.ndarray:
    """Stack a dataset of :class:`ExpressionParams` or `(n, 53)` rows."""
    if len(dataset) == 0:
        raise ValueError("the training set is empty")
    if isinstance(dataset[0], ExpressionParams):
        return ExpressionParams.stack(dataset)
    data = as_finite_array(dataset, 'training set', (None, INPUT_DIM))
    return np.clip(data, -DEFAULT_CLAMP, DEFAULT_CLAMP)


def train(model: TranslatorModel,
          dataset,
          adapter: AdapterMatrix,
          human_rig: RigSpec,
          config: Optional[TrainConfig] = None,
          anime_rig: Optional[RigSpec] = None
         ) -> Tuple[TranslatorModel, List[LossBreakdown]]:
    """
    Train `model` with Adam on the mean batch geometric loss.

    Every epoch draws a fresh permutation of the dataset from a generator
    seeded with `config.rng_seed` and steps once per batch of
    `config.batch_size` samples (the last batch may be short). The same
    seed, dataset and config reproduce bit-identical parameters.

    Args:
      model (:class:`TranslatorModel`): Starting point; left unchanged.
      dataset: :class:`ExpressionParams` records or an `(n, 53)` array.
      adapter (:class:`AdapterMatrix`): Fixed anime-to-human lift.
      human_rig (:class:`RigSpec`): Rig the loss is evaluated on.
      config (:class:`TrainConfig`): Hyperparameters; defaults if omitted.
      anime_rig (:class:`RigSpec`, optional): Checked against the adapter.

    Returns:
      The trained model and one :class:`LossBreakdown` per epoch, each the
      sample-weighted mean over that epoch's batches.

    Raises:
      TrainingDivergedError: if a loss or an updated parameter becomes
        non-finite. The error carries the last finite model and the history
        so far.
    """
    config = TrainConfig() if config is None else config
    data = as_dataset(dataset)
    loss = config.make_loss(human_rig, adapter, anime_rig)
    rng = np.random.default_rng(config.rng_seed)
    adam = AdamState(model.parameter_count, config.beta1, config.beta2,
                     config.eps)
    theta = model.flatten()
    current = model
    history: List[LossBreakdown] = []
    count = len(data)

    for epoch in tqdm(range(1, config.epochs + 1),
                      desc='train',
                      disable=not config.progress):
        order = rng.permutation(count)
        sums = np.zeros(3)
        for start in range(0, count, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            try:
                ev = loss.evaluate(current, batch, with_gradient=True)
            except NumericalError as e:
                raise TrainingDivergedError(f"epoch {epoch}: {e}",
                                            last_good=current,
                                            history=history) from e
            b = ev.breakdown
            sums += len(batch) * np.array([b.l_lm, b.l_closure, b.l_ver])
            theta = adam.step(theta, ev.gradient, config.learning_rate)
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(
                    f"epoch {epoch}: parameters became non-finite",
                    last_good=current,
                    history=history)
            current = current.with_parameters(theta)

        lLm, lCl, lVer = (sums / count).tolist()
        record = LossBreakdown(lLm, lCl, lVer, loss.compose(lLm, lCl, lVer))
        history.append(record)
        logger.info("epoch %d: l_lm %.6g l_closure %.6g l_ver %.6g "
                    "l_total %.6g", epoch, *record.as_row())
    return current, history


def write_history(path, history: List[LossBreakdown]):
    rows = [[epoch] + b.as_row() for epoch, b in enumerate(history, start=1)]
    write_csv(path, HISTORY_HEADER, np.asarray(rows).reshape(-1, 5))


def read_history(path) -> List[LossBreakdown]:
    header, data = read_csv(path)
    if header != HISTORY_HEADER:
        raise ArtifactError(f"{path}:1: expected header "
                            f"{','.join(HISTORY_HEADER)}")
    return [LossBreakdown(*row[1:].tolist()) for row in data]
