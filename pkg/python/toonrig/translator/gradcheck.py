# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .losses import GeometricLoss
from .model import TranslatorModel

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
ERROR_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference probe of the analytic gradient."""
    max_relative_error: float
    probed: int
    skipped: int
    tolerance: float
    indices: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.probed > 0 and self.max_relative_error < self.tolerance


def relative_error(analytic, numeric, floor=ERROR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def __same_signature(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradient(loss: GeometricLoss,
                   model: TranslatorModel,
                   params,
                   probes: int = 100,
                   seed: int = 0,
                   step: float = DEFAULT_STEP,
                   tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """
    Compare the analytic gradient of `loss` at `model` against central
    differences `(f(x+h) - f(x-h)) / 2h` on `probes` randomly chosen
    parameters. A probe whose two evaluations put any `|.|`, rectifier or
    logit-clip argument on different sides of its kink straddles the kink
    and is skipped. Arguments within `KINK_ATOL` of a kink count as on it,
    so rounding noise in structurally zero offsets does not flip a side.

    Args:
      loss (:class:`GeometricLoss`): The objective.
      model (:class:`TranslatorModel`): Point of evaluation.
      params: The batch the loss is averaged over.
      probes (int): Number of parameters to probe.
      seed (int): Seed of the probe selection.
      step (float): Finite-difference step `h`.
      tolerance (float): Pass threshold on the relative error
        `|a - n| / max(|a|, |n|, 1e-5)`.

    Returns:
      :class:`GradCheckReport`: Maximum relative error over the kept probes.
    """
    if probes < 1:
        raise ValueError(f"probe count must be >= 1, got {probes}")
    center = loss.evaluate(model, params, with_gradient=True)
    theta = model.flatten()
    rng = np.random.default_rng(seed)
    count = min(probes, theta.size)
    indices = rng.choice(theta.size, size=count, replace=False)

    worst, skipped, kept = 0.0, 0, []
    for index in indices.tolist():
        shifted = theta.copy()
        shifted[index] = theta[index] + step
        high = loss.evaluate(model.with_parameters(shifted),
                             params,
                             with_signature=True)
        shifted[index] = theta[index] - step
        low = loss.evaluate(model.with_parameters(shifted),
                            params,
                            with_signature=True)
        if not __same_signature(high.signature, low.signature):
            skipped += 1
            continue
        numeric = (high.breakdown.l_total - low.breakdown.l_total) / (2 * step)
        err = relative_error(center.gradient[index], numeric)
        logger.debug("probe %d: analytic %.6e numeric %.6e rel %.2e", index,
                     center.gradient[index], numeric, err)
        worst = max(worst, err)
        kept.append(index)
    report = GradCheckReport(worst, len(kept), skipped, tolerance, kept)
    logger.info("gradient check: %d probes, %d skipped, max rel err %.3e",
                report.probed, skipped, worst)
    return report
