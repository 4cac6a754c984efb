"""Score-driven recursion for the squared scale and the coupled regularizer.

The squared scale follows its own filtered update: each observed error e
contributes the bounded increment

    s^2 <- s^2 + alpha_s * mean_e [ s^2 nu (e^2 - s^2) / (s^2 nu + e^2) ],

which has e^2 = s^2 as its fixed point, saturates for huge errors (so one
outlier moves the scale by at most alpha_s * nu * s^2), and tracks a sustained
change in error variance. The Tikhonov constant is tied to the scale so that a
rising scale loosens the update-norm bound: with the default variant

    tau(s^2) = 0.9 beta / (1 + s^2) + 0.1 beta / s^2

the effective regularizer s^2 * tau stays inside [0.1 beta, beta] for every
scale, and for s^2 -> infinity the damped natural step approaches the Gaussian
large-scale limit. The `reciprocal` variant tau = 1/(beta + s^2) is kept as a
simpler alternative behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

TAU_VARIANTS = ("bounded", "reciprocal")


@dataclass
class ScaleState:
    s2: float = 1.0
    alpha_s: float = 0.1
    scale_floor: float = 1e-4
    beta: float = 1.0
    tau_variant: str = "bounded"

    def __post_init__(self) -> None:
        if self.tau_variant not in TAU_VARIANTS:
            raise InputError(f"unknown tau variant {self.tau_variant!r}")
        if self.scale_floor <= 0 or self.beta <= 0:
            raise NumericError("scale_floor and beta must be > 0")
        self.s2 = max(float(self.s2), self.scale_floor)


def scale_increments(s2: float, errors: np.ndarray, nu: float) -> np.ndarray:
    """Per-error score-driven increments before the learning rate."""
    e2 = np.asarray(errors, dtype=float).reshape(-1) ** 2
    return s2 * nu * (e2 - s2) / (s2 * nu + e2)


def scale_step(state: ScaleState, errors, nu: float) -> ScaleState:
    """Advance s^2 by alpha_s times the mean per-error increment, floored."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise InputError("scale_step needs at least one error")
    if not np.all(np.isfinite(e)):
        raise NumericError("scale_step: errors must be finite")
    inc = float(np.mean(scale_increments(state.s2, e, nu)))
    state.s2 = max(state.s2 + state.alpha_s * inc, state.scale_floor)
    return state


def tau_from_scale(state: ScaleState) -> float:
    s2 = state.s2
    if state.tau_variant == "reciprocal":
        return 1.0 / (state.beta + s2)
    return 0.9 * state.beta / (1.0 + s2) + 0.1 * state.beta / s2
