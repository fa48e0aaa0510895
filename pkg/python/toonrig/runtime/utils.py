# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
from __future__ import annotations

import contextlib
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class ToonrigError(RuntimeError):
    """Base class for every error raised by `toonrig`."""


class ArityError(ToonrigError, ValueError):
    """A coefficient vector does not match the basis it is applied to."""


class TopologyError(ToonrigError, ValueError):
    """Meshes, keypoint sets or pair indices disagree with a rig."""


class NonFiniteError(ToonrigError, ValueError):
    """An input contains NaN or Inf."""


class DegenerateRigError(ToonrigError, ValueError):
    """A rig cannot support the requested measurement."""


class IllPosedError(ToonrigError):
    """A least-squares system has no unique solution."""


class ArtifactError(ToonrigError):
    """A JSON or CSV artifact could not be parsed."""


class NumericalError(ToonrigError):
    """A computation produced non-finite intermediates."""


class TrainingDivergedError(NumericalError):
    """
    Training produced a non-finite loss. The last parameters that produced a
    finite loss are kept on `last_good`, together with the epochs that
    completed before the failure on `history`.
    """

    def __init__(self, msg, last_good=None, history=None):
        super().__init__(msg)
        self.last_good = last_good
        self.history = [] if history is None else history


class Color:
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'


def emit_error(msg, stream=None):
    """
    Print a user-facing diagnostic with a highlighted `error:` prefix. Colour
    codes are only used when the stream is a terminal.
    """
    stream = sys.stderr if stream is None else stream
    if hasattr(stream, 'isatty') and stream.isatty():
        stream.write(Color.RED + 'error: ' + Color.END + Color.BOLD + msg +
                     Color.END + '\n')
    else:
        stream.write('error: ' + msg + '\n')


def as_finite_array(values, name, shape=None, dtype=np.float64):
    """
    Convert `values` to a float64 `ndarray`, rejecting NaN/Inf and, when
    `shape` is given, any other shape. `None` entries in `shape` match any
    extent.
    """
    arr = np.asarray(values, dtype=dtype)
    if shape is not None:
        if arr.ndim != len(shape) or any(
                want is not None and want != got
                for want, got in zip(shape, arr.shape)):
            raise ArityError(f"{name} has shape {arr.shape}, expected "
                             f"{tuple('*' if s is None else s for s in shape)}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


@contextlib.contextmanager
def atomic_write(path, mode='w', newline='\n') -> Iterator:
    """
    Open a temporary file next to `path` and move it into place only once
    the block finishes without raising. Readers never observe a partially
    written artifact.
    """
    path = Path(path)
    fd, tmpName = tempfile.mkstemp(prefix='.' + path.name + '.',
                                   dir=str(path.parent or Path('.')))
    try:
        kwargs = {'encoding': 'utf-8', 'newline': newline} if 'b' not in mode \
            else {}
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmpName, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmpName)
        raise


def write_csv(path, header: Sequence[str], rows, fmt='%.17g'):
    """
    Write a header row followed by one row per entry of the 2D array `rows`.
    Floats use `fmt`, which keeps every artifact bit-reproducible.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.size and rows.shape[1] != len(header):
        raise ArityError(f"{len(header)} columns in header but rows have "
                         f"{rows.shape[1]}")
    with atomic_write(path) as f:
        f.write(','.join(header) + '\n')
        if rows.size:
            np.savetxt(f, rows, fmt=fmt, delimiter=',')
    logger.debug("wrote %d rows to %s", 0 if not rows.size else len(rows),
                 path)


def read_csv(path, expected_columns=None) -> Tuple[List[str], np.ndarray]:
    """
    Read a CSV artifact with a header row into `(header, rows)`. Raises
    `ArtifactError` naming the file, line and field that failed to parse.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise ArtifactError(f"{path}: {e.strerror}") from e
    if not lines:
        raise ArtifactError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in lines[0].split(',')]
    if expected_columns is not None and len(header) != expected_columns:
        raise ArtifactError(f"{path}:1: header has {len(header)} columns, "
                            f"expected {expected_columns}")
    rows = []
    for lineNo, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(',')
        if len(fields) != len(header):
            raise ArtifactError(f"{path}:{lineNo}: {len(fields)} fields, "
                                f"expected {len(header)}")
        row = []
        for col, field in enumerate(fields):
            try:
                row.append(float(field))
            except ValueError:
                raise ArtifactError(
                    f"{path}:{lineNo}: field '{header[col]}' is not a number "
                    f"({field!r})") from None
        rows.append(row)
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.all(np.isfinite(data)):
        raise ArtifactError(f"{path}: contains non-finite values")
    return header, data
