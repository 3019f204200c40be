"""Counter-based random streams.

Every random draw in a filter run comes from a Philox stream keyed by the
run seed, with the time step and the draw's purpose placed in the high
counter words.  A run is therefore a pure function of its seed, and each
(t, purpose) stream can be regenerated independently of the others.
"""

from __future__ import annotations

import numpy as np

INIT, THETA, STATE, RESAMPLE, PERTURB = range(5)


def stream(seed: int, t: int, purpose: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds are unsigned")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, purpose, t]))
