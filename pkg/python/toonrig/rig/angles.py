# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..runtime.utils import as_finite_array

AXIS_NAMES = ('yaw', 'pitch', 'roll')
_UNIT_HALF_TURN = {'rad': math.pi, 'deg': 180.0}


@dataclass(frozen=True)
class AngleConvention:
    """
    A one-to-one remap between two head-angle conventions. Output slot `i`
    takes source axis `order[i]`, multiplied by `signs[i]` and converted from
    `source_unit` to `target_unit`.
    """
    order: Tuple[int, int, int] = (0, 1, 2)
    signs: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    source_unit: str = 'rad'
    target_unit: str = 'rad'

    def __post_init__(self):
        if sorted(self.order) != [0, 1, 2]:
            raise ValueError(f"axis order {self.order} is not a permutation")
        if any(s not in (1.0, -1.0) for s in self.signs):
            raise ValueError(f"signs must be +1 or -1, got {self.signs}")
        for unit in (self.source_unit, self.target_unit):
            if unit not in _UNIT_HALF_TURN:
                raise ValueError(f"unknown angle unit '{unit}'")
        object.__setattr__(self, 'order', tuple(int(i) for i in self.order))
        object.__setattr__(self, 'signs', tuple(float(s) for s in self.signs))

    @property
    def scale(self) -> float:
        return _UNIT_HALF_TURN[self.target_unit] / _UNIT_HALF_TURN[
            self.source_unit]

    def inverse(self) -> 'AngleConvention':
        order = [0, 0, 0]
        signs = [1.0, 1.0, 1.0]
        for slot, axis in enumerate(self.order):
            order[axis] = slot
            signs[axis] = self.signs[slot]
        return AngleConvention(tuple(order), tuple(signs), self.target_unit,
                               self.source_unit)

    @classmethod
    def parse(cls, text, source_unit='rad', target_unit='rad'):
        """
        Parse a convention such as `"-yaw,pitch,roll"`: one signed source axis
        name per output slot.
        """
        items = [t.strip() for t in text.split(',')]
        if len(items) != 3:
            raise ValueError(f"expected three axes in '{text}'")
        order, signs = [], []
        for item in items:
            sign = -1.0 if item.startswith('-') else 1.0
            name = item.lstrip('+-')
            if name not in AXIS_NAMES:
                raise ValueError(f"unknown axis '{name}' in '{text}'")
            order.append(AXIS_NAMES.index(name))
            signs.append(sign)
        return cls(tuple(order), tuple(signs), source_unit, target_unit)


IDENTITY = AngleConvention()


def map_head_angles(pose, convention: AngleConvention = IDENTITY):
    """
    Map a head-angle triple (or an `(n, 3)` array of them) from one axis
    order, sign and unit convention to another.

    Raises:
      NonFiniteError: if an angle is NaN or Inf.
      ValueError: if an angle lies outside the half-turn range of the source
        unit.
    """
    pose = as_finite_array(pose, 'head angles', None)
    if pose.shape[-1:] != (3,):
        raise ValueError(f"head angles must have 3 components, got "
                         f"{pose.shape}")
    limit = _UNIT_HALF_TURN[convention.source_unit]
    if np.any(np.abs(pose) > limit):
        raise ValueError(f"head angles must lie in [-{limit}, {limit}] "
                         f"{convention.source_unit}")
    signs = np.asarray(convention.signs)
    out = pose[..., list(convention.order)] * signs
    if convention.source_unit != convention.target_unit:
        out = out * convention.scale
    return out
