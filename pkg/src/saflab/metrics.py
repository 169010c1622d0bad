"""Deviation metrics on tap vectors."""

from __future__ import annotations

import numpy as np

from .exceptions import DegeneratePlantError, InvalidArgumentError

NMSD_FLOOR_DB = -300.0


def nmsd(weights, plant) -> float:
    """Normalized mean square deviation ``10 log10(||w - h||^2 / ||h||^2)`` in dB.

    Floored at -300 dB so an exact match stays finite.

    Raises
    ------
    DegeneratePlantError
        If ``plant`` is all zeros.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    h = np.asarray(plant, dtype=np.float64).reshape(-1)
    if w.shape != h.shape:
        raise InvalidArgumentError(f"weights ({w.size}) and plant ({h.size}) differ in length")
    hh = float(np.dot(h, h))
    if hh == 0.0:
        raise DegeneratePlantError("NMSD is undefined for an all-zero plant")
    diff = w - h
    dd = float(np.dot(diff, diff))
    if dd == 0.0:
        return NMSD_FLOOR_DB
    return max(10.0 * np.log10(dd / hh), NMSD_FLOOR_DB)
