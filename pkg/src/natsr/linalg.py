"""Dense helpers for the small SPD systems the optimizer solves each step.

Everything operates on float64 numpy arrays. All systems in this codebase are
curvature-plus-Tikhonov, hence symmetric positive definite by construction, so
Cholesky is the only factorization offered. Shapes are validated at entry:
these routines sit inside an online loop that runs thousands of steps and a
mis-shaped operand should fail at the offending call, not three modules later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CurvatureError, NumericError, ShapeError

SYMMETRY_RTOL = 1e-10


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got {arr.ndim} dimensions")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


@dataclass
class SpdFactor:
    """Cholesky factor of (source + damping * I).

    `source` must be symmetric within 1e-10 relative; `damping` >= 0 is folded
    into the matrix before factorization so subsequent solves apply the damped
    inverse directly.
    """

    source: np.ndarray
    damping: float = 0.0
    factorization: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        s = as_matrix(self.source)
        if s.shape[0] != s.shape[1]:
            raise ShapeError(f"SpdFactor: source must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NumericError("SpdFactor: source has non-finite entries")
        scale = max(float(np.abs(s).max(initial=0.0)), 1.0)
        if float(np.abs(s - s.T).max(initial=0.0)) > SYMMETRY_RTOL * scale:
            raise ShapeError("SpdFactor: source is not symmetric within 1e-10")
        if not np.isfinite(self.damping) or self.damping < 0:
            raise NumericError("SpdFactor: damping must be finite and >= 0")
        damped = s + self.damping * np.eye(s.shape[0])
        try:
            self.factorization = np.linalg.cholesky(damped)
        except np.linalg.LinAlgError as exc:
            raise CurvatureError(
                "damped matrix is not positive definite "
                f"(dim={s.shape[0]}, damping={self.damping:g})"
            ) from exc
        self.source = s

    @property
    def dim(self) -> int:
        return self.source.shape[0]


def spd_solve(f: SpdFactor, rhs) -> np.ndarray:
    """Solve (source + damping * I) x = rhs through the cached Cholesky factor."""
    arr = np.asarray(rhs, dtype=float)
    vector_in = arr.ndim == 1
    if vector_in:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != f.dim:
        raise ShapeError(f"spd_solve: rhs of shape {np.shape(rhs)} against dim {f.dim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("spd_solve: rhs has non-finite entries")
    half = solve_triangular(f.factorization, arr, lower=True)
    out = solve_triangular(f.factorization.T, half, lower=False)
    return out[:, 0] if vector_in else out


def kron_apply(a, g, v) -> np.ndarray:
    """Apply the Kronecker product (a otimes g) to vec(v) in factored form.

    `v` must carry a.cols * g.cols elements, read column-major as a
    (g.cols, a.cols) matrix X; the result is the column-major vec of
    g @ X @ a.T, identical to materializing np.kron(a, g) @ v.
    """
    a = as_matrix(a)
    g = as_matrix(g)
    flat = np.asarray(v, dtype=float).reshape(-1)
    if flat.size != a.shape[1] * g.shape[1]:
        raise ShapeError(
            f"kron_apply: vector of size {flat.size} against factors {a.shape} x {g.shape}"
        )
    x = flat.reshape((g.shape[1], a.shape[1]), order="F")
    return (g @ x @ a.T).reshape(-1, order="F")
