"""Student's-t and Gaussian losses, their output-space scores, and predictive sampling.

Score convention used throughout the package: `*_score` functions return the
gradient of the summed negative log-likelihood with respect to the
predictions, so curvature solves yield descent directions directly. For the
t loss the per-output score is

    -(nu + 1) e / (nu s^2 + e^2),        e = y - pred,

whose magnitude peaks at |e| = s sqrt(nu) with value (nu+1)/(2 s sqrt(nu)) and
decays like 1/|e| beyond it; that decay is what keeps single outliers from
producing outsized updates. The variance of this score under the model is the
per-output curvature constant kappa = (nu+1)/((nu+3) s^2).

Reported losses drop the additive constants of the density; `t_full_nll`
retains the 0.5 log s^2 term so runs with different scales stay comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .seeding import as_generator


@dataclass(frozen=True)
class StudentTSpec:
    """Degrees of freedom and (time-varying) squared scale of the assumed density."""

    nu: float
    s2: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise NumericError(f"nu must be finite and > 0, got {self.nu}")
        if not (np.isfinite(self.s2) and self.s2 > 0):
            raise NumericError(f"s2 must be finite and > 0, got {self.s2}")

    @property
    def scale(self) -> float:
        return math.sqrt(self.s2)


@dataclass(frozen=True)
class LossValue:
    total: float
    errors: np.ndarray  # y - pred, per output


def _errors(y, pred) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if y.shape != pred.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {pred.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(pred))):
        raise NumericError("targets/predictions must be finite")
    return y - pred


def t_nll(y, pred, spec: StudentTSpec) -> LossValue:
    """Mean over outputs of ((nu+1)/2) log(1 + e^2/(nu s^2)), constants dropped."""
    e = _errors(y, pred)
    total = float(np.mean(0.5 * (spec.nu + 1.0) * np.log1p(e * e / (spec.nu * spec.s2))))
    return LossValue(total=total, errors=e)


def t_full_nll(y, pred, spec: StudentTSpec) -> float:
    """t_nll plus the 0.5 log(s^2) term; for reporting only, never for gradients."""
    return t_nll(y, pred, spec).total + 0.5 * math.log(spec.s2)


def t_score_output(e, spec: StudentTSpec) -> np.ndarray:
    """Gradient of the summed t NLL with respect to the predictions."""
    e = np.asarray(e, dtype=float)
    return -(spec.nu + 1.0) * e / (spec.nu * spec.s2 + e * e)


def t_score_max(spec: StudentTSpec) -> float:
    """Largest attainable |score| per output, reached at |e| = s sqrt(nu)."""
    return (spec.nu + 1.0) / (2.0 * math.sqrt(spec.nu * spec.s2))


def t_output_fisher_kappa(spec: StudentTSpec) -> float:
    """Variance of the per-output score under the model: (nu+1)/((nu+3) s^2)."""
    return (spec.nu + 1.0) / ((spec.nu + 3.0) * spec.s2)


def sample_predictive(pred, spec: StudentTSpec, k: int, seed) -> np.ndarray:
    """Draw k target vectors from the predicted density, independent per output.

    Returns an array of shape (k, m) with rows pred + s * T_nu.
    """
    if k < 1:
        raise ShapeError(f"k must be >= 1, got {k}")
    pred = np.asarray(pred, dtype=float).reshape(-1)
    rng = as_generator(seed)
    draws = rng.standard_t(spec.nu, size=(k, pred.size))
    return pred[None, :] + spec.scale * draws


def gaussian_nll(y, pred, s2: float = 1.0) -> LossValue:
    """Mean over outputs of e^2/(2 s^2); the MSE loss up to scaling."""
    e = _errors(y, pred)
    total = float(np.mean(0.5 * e * e / s2))
    return LossValue(total=total, errors=e)


def gaussian_score(e, s2: float = 1.0) -> np.ndarray:
    """Gradient of the summed Gaussian NLL w.r.t. the predictions: -e/s^2."""
    return -np.asarray(e, dtype=float) / s2
