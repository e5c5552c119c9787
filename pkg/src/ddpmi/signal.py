"""First-order low-pass filtering of measured signals.

Each channel obeys ``dx_f/dt = -lam * (x_f - x)`` and is discretized exactly
under a zero-order hold on the input, so any ``lam * dt`` is stable.
"""

from __future__ import annotations

import numpy as np

from ddpmi.core import DimensionError, InputError

#: Control loop period of the reference setup (15 Hz).
DEFAULT_DT = 1.0 / 15.0


class LowPassFilter:
    """Per-channel exponential smoother.

    The first sample initializes the state, so there is no start-up transient.

    Parameters
    ----------
    lam : sequence of float
        Positive break frequencies in rad/s, one per channel.
    dt : float
        Sample period in seconds.
    """

    def __init__(self, lam, dt: float = DEFAULT_DT):
        lam = np.array(lam, dtype=float).ravel()
        if lam.size == 0:
            raise DimensionError("filter needs at least one channel")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("filter gains must be positive and finite")
        if not np.isfinite(dt) or dt <= 0:
            raise ValueError("dt must be positive")
        self.lam = lam
        self.dt = float(dt)
        # 1 - exp(-lam dt), computed with expm1 for small lam*dt
        self.gain = -np.expm1(-lam * self.dt)
        self.state = np.zeros_like(lam)
        self.initialized = False

    @property
    def k(self) -> int:
        return self.lam.size

    def reset(self, state=None) -> None:
        """Clear the state, or force it to ``state``."""
        if state is None:
            self.state = np.zeros_like(self.lam)
            self.initialized = False
        else:
            self.state = self._check(state).copy()
            self.initialized = True

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.k:
            raise DimensionError(f"filter has {self.k} channels, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite sample")
        return x

    def apply(self, x) -> np.ndarray:
        """Advance one sample and return a copy of the filtered value."""
        x = self._check(x)
        if not self.initialized:
            self.state = x.copy()
            self.initialized = True
        else:
            self.state = self.state + self.gain * (x - self.state)
        return self.state.copy()

    __call__ = apply


def lowpass_apply(f: LowPassFilter, x) -> np.ndarray:
    return f.apply(x)
