"""The five bounded activation functions, applied element-wise.

Boundary conventions are pinned: sign(0) = -1 and hardlim(0) = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

SIGMOID = "sigmoid"
BRELU = "brelu"
TANH = "tanh"
SIGN = "sign"
HARDLIM = "hardlim"

_NAMES = (SIGMOID, BRELU, TANH, SIGN, HARDLIM)

# Sign and hard-limiter are piecewise constant; treated as non-differentiable
# by the model-complexity reporting.
NON_DIFFERENTIABLE = frozenset({SIGN, HARDLIM})


@dataclass(frozen=True)
class ActivationKind:
    """A named bounded activation; ``bound`` is only meaningful for brelu."""

    name: str
    bound: float = 1.0

    def __post_init__(self):
        if self.name not in _NAMES:
            raise ValueError(f"unknown activation {self.name!r}; expected one of {_NAMES}")
        if self.name == BRELU and not self.bound > 0:
            raise ValueError(f"brelu bound must be > 0, got {self.bound}")

    @classmethod
    def parse(cls, text: str) -> "ActivationKind":
        """Parse a config name, case-insensitively."""
        name = text.strip().lower()
        if name not in _NAMES:
            raise ValueError(f"unknown activation {text!r}; expected one of {_NAMES}")
        return cls(name)

    @property
    def differentiable(self) -> bool:
        return self.name not in NON_DIFFERENTIABLE

    def apply(self, x):
        """Evaluate element-wise on a scalar or array."""
        x = np.asarray(x, dtype=np.float64)
        if self.name == SIGMOID:
            return expit(x)
        if self.name == BRELU:
            return np.minimum(np.maximum(x, 0.0), self.bound)
        if self.name == TANH:
            return np.tanh(x)
        if self.name == SIGN:
            return np.where(x > 0.0, 1.0, -1.0)
        return np.where(x >= 0.0, 1.0, 0.0)  # hardlim

    def __call__(self, x):
        return self.apply(x)


def activate(kind: ActivationKind, x: float) -> float:
    """Scalar convenience wrapper around ``kind.apply``."""
    return float(kind.apply(x))
