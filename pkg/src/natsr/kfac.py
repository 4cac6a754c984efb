"""Layerwise Kronecker-factored curvature with Monte-Carlo sampled scores.

Per layer, the covariance of the flattened weight-and-bias gradient is
approximated by A (x) G: A collects outer products of the bias-augmented layer
inputs, G outer products of pre-activation gradients whose output-space scores
are sampled from the model's own predictive distribution (k draws per data
sample). Sampling the scores bakes the output-score variance into G, so no
separate curvature constant is multiplied in. Replay samples enter the
expectation with weight lam; the combined mass is folded into the input factor
(A = A_new + lam * A_replay, G mass-normalized) so that in the single-layer
analytic case the pair reproduces I_new + lam * I_replay exactly.

Damping and inversion. The damped inverse (A (x) G + tau I)^(-1) is applied
exactly by diagonalizing both factors once per refresh:

    (Qa (x) Qg) diag(la_i * lg_j + tau)^(-1) (Qa (x) Qg)^T

which costs two small eigendecompositions at refresh time and four matmuls per
step. A cheaper classical alternative, adding sqrt(tau) to each factor and
Cholesky-solving, is available as damping="factored"; it approximates the same
operator but is not exact, so the default stays with the exact form.

Factors are smoothed with an EMA and refreshed only when the observed loss is
anomalous relative to running EMA estimates of its mean and variance (upper
1% of a normal by default), or after max_stale steps. Between refreshes the
cached inverse - including the tau it was built with - is reused untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CurvatureError, InputError, NumericError, StateError
from .likelihood import StudentTSpec, sample_predictive, t_output_fisher_kappa, t_score_output
from .linalg import SpdFactor, spd_solve
from .network import Network
from .seeding import as_generator

VAR_FLOOR = 1e-12
TAU_CACHE_TOL = 1e-12
DEFAULT_Z = 2.326  # upper 1% of a standard normal
DAMPING_MODES = ("exact", "factored")


# -- refresh policy ----------------------------------------------------------------


@dataclass
class LossStats:
    """EMA mean/variance of recent losses; exact moments during burn-in."""

    ema_weight: float = 0.01
    burn_in: int = 10
    count: int = 0
    loss_mean_ema: float = 0.0
    loss_var_ema: float = VAR_FLOOR
    _sum: float = field(default=0.0, repr=False)
    _sumsq: float = field(default=0.0, repr=False)

    def update(self, loss: float) -> None:
        if not np.isfinite(loss):
            raise NumericError("loss must be finite")
        self.count += 1
        if self.count <= self.burn_in:
            self._sum += loss
            self._sumsq += loss * loss
            mean = self._sum / self.count
            self.loss_mean_ema = mean
            self.loss_var_ema = max(self._sumsq / self.count - mean * mean, VAR_FLOOR)
        else:
            w = self.ema_weight
            delta = loss - self.loss_mean_ema
            self.loss_mean_ema = (1.0 - w) * self.loss_mean_ema + w * loss
            self.loss_var_ema = max((1.0 - w) * self.loss_var_ema + w * delta * delta, VAR_FLOOR)


def refresh_decision(
    current_loss: float,
    stats: LossStats,
    steps_since_refresh: int,
    max_stale: int,
    z_threshold: float = DEFAULT_Z,
) -> bool:
    """True when the loss is in the estimated worst tail or the factors are stale."""
    if stats.count < stats.burn_in:
        return True
    if steps_since_refresh >= max_stale:
        return True
    z = (current_loss - stats.loss_mean_ema) / math.sqrt(max(stats.loss_var_ema, VAR_FLOOR))
    return z > z_threshold


# -- bound -------------------------------------------------------------------------


def bound_value(spec: StudentTSpec, m: int, tau: float) -> float:
    """Norm ceiling of the damped natural step: (1/4) sqrt((nu+1)(nu+3) m / (tau nu))."""
    if tau <= 0:
        raise NumericError(f"tau must be > 0, got {tau}")
    if m < 0:
        raise InputError("m must be >= 0")
    return 0.25 * math.sqrt((spec.nu + 1.0) * (spec.nu + 3.0) * m / (tau * spec.nu))


# -- factor estimation ---------------------------------------------------------------


def _factor_contributions(net: Network, cache) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (A, G) means over the rows of one backward-filled cache."""
    pairs = []
    for rows in net.factor_arrays(cache):
        if rows.spatial:
            n, positions = rows.a.shape[0], rows.a.shape[1]
            a = np.einsum("nlp,nlq->pq", rows.a, rows.a) / n  # sum over positions
            g = np.einsum("nlo,nlq->oq", rows.g, rows.g) / (n * positions)
        else:
            n = rows.a.shape[0]
            a = rows.a.T @ rows.a / n
            g = rows.g.T @ rows.g / n
        pairs.append((0.5 * (a + a.T), 0.5 * (g + g.T)))
    return pairs


def mc_fisher_factors(
    net: Network,
    new_x: np.ndarray,
    replay_x: np.ndarray | None,
    spec: StudentTSpec,
    k: int,
    lam: float,
    seed,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Monte-Carlo curvature factors from new and (lam-weighted) replay inputs.

    For every data sample: forward once, draw k targets from the predictive
    distribution, backpropagate each score. A accumulates weighted sums
    (weight 1/|new| per new sample, lam/|replay| per replay sample); G is the
    mass-normalized weighted mean so the combined mass appears exactly once.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    new_x = np.atleast_2d(np.asarray(new_x, dtype=float))
    if new_x.shape[0] == 0:
        raise InputError("mc_fisher_factors needs at least one new sample")
    rng = as_generator(seed)
    groups: list[tuple[np.ndarray, float]] = [(new_x, 1.0)]
    if replay_x is not None and lam > 0:
        replay_x = np.atleast_2d(np.asarray(replay_x, dtype=float))
        if replay_x.shape[0] > 0:
            groups.append((replay_x, float(lam)))
    a_sums: list[np.ndarray] | None = None
    g_sums: list[np.ndarray] | None = None
    total_w = 0.0
    for batch, group_w in groups:
        w_each = group_w / batch.shape[0]
        for x in batch:
            tiled = np.tile(x, (k, 1))
            preds, cache = net.forward(tiled)
            targets = sample_predictive(preds[0], spec, k, rng)
            scores = t_score_output(targets - preds, spec)
            net.backward(cache, scores)
            contribs = _factor_contributions(net, cache)
            if a_sums is None:
                a_sums = [w_each * a for a, _ in contribs]
                g_sums = [w_each * g for _, g in contribs]
            else:
                for i, (a, g) in enumerate(contribs):
                    a_sums[i] += w_each * a
                    g_sums[i] += w_each * g
            total_w += w_each
    return [(a, g / total_w) for a, g in zip(a_sums, g_sums)]


def analytic_factor_pairs(
    net: Network,
    new_x: np.ndarray,
    replay_x: np.ndarray | None,
    spec: StudentTSpec,
    lam: float,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact factors for a single dense layer: input outer products with G = kappa I.

    With one layer the pre-activation gradient equals the output score, whose
    model variance is the analytic constant kappa, so A (x) G equals the true
    damped-curvature target and no sampling error enters. Used by the
    degenerate-point equivalence checks and the bound reporting path.
    """
    if len(net.layers) != 1:
        raise InputError("analytic factors are exact only for a single-layer network")
    new_x = np.atleast_2d(np.asarray(new_x, dtype=float))
    if new_x.shape[0] == 0:
        raise InputError("analytic_factor_pairs needs at least one new sample")
    kappa = t_output_fisher_kappa(spec)
    aug = np.concatenate([new_x, np.ones((new_x.shape[0], 1))], axis=1)
    a = aug.T @ aug / new_x.shape[0]
    if replay_x is not None and lam > 0:
        replay_x = np.atleast_2d(np.asarray(replay_x, dtype=float))
        if replay_x.shape[0] > 0:
            aug_b = np.concatenate([replay_x, np.ones((replay_x.shape[0], 1))], axis=1)
            a = a + lam * (aug_b.T @ aug_b / replay_x.shape[0])
    g = kappa * np.eye(net.output_dim)
    return [(0.5 * (a + a.T), g)]


# -- engine -------------------------------------------------------------------------


@dataclass
class KfacLayerState:
    a_ema: np.ndarray
    g_ema: np.ndarray
    # inverse cache, filled by prepare_inverse
    a_eigvals: np.ndarray | None = None
    a_eigvecs: np.ndarray | None = None
    g_eigvals: np.ndarray | None = None
    g_eigvecs: np.ndarray | None = None
    a_fac: SpdFactor | None = None
    g_fac: SpdFactor | None = None


class KfacEngine:
    """Holds per-layer factor EMAs and the cached damped inverse for one network."""

    def __init__(self, net: Network, damping: str = "exact", alpha_ema: float = 0.5):
        if damping not in DAMPING_MODES:
            raise InputError(f"unknown damping mode {damping!r}")
        self.net = net
        self.damping = damping
        self.alpha_ema = alpha_ema
        self.layers: list[KfacLayerState] | None = None
        self.tau: float | None = None
        self.loss_stats = LossStats()
        self.last_refresh_step: int | None = None

    @property
    def initialized(self) -> bool:
        return self.layers is not None

    def update_factor_emas(self, factors, alpha: float | None = None) -> None:
        """Convex EMA toward the new factors; the first call copies them."""
        alpha = self.alpha_ema if alpha is None else alpha
        if self.layers is None:
            self.layers = [KfacLayerState(a_ema=a.copy(), g_ema=g.copy()) for a, g in factors]
            return
        if len(factors) != len(self.layers):
            raise StateError("factor count does not match the engine's layers")
        for state, (a, g) in zip(self.layers, factors):
            if a.shape != state.a_ema.shape or g.shape != state.g_ema.shape:
                raise StateError("factor shapes changed between refreshes")
            state.a_ema = (1.0 - alpha) * state.a_ema + alpha * a
            state.g_ema = (1.0 - alpha) * state.g_ema + alpha * g

    def prepare_inverse(self, tau: float) -> None:
        """(Re)build the damped-inverse cache for the current EMAs at this tau."""
        if self.layers is None:
            raise StateError("no factors yet: refresh before preparing the inverse")
        if not np.isfinite(tau) or tau < 0:
            raise NumericError(f"tau must be finite and >= 0, got {tau}")
        for state in self.layers:
            if self.damping == "exact":
                try:
                    la, qa = np.linalg.eigh(state.a_ema)
                    lg, qg = np.linalg.eigh(state.g_ema)
                except np.linalg.LinAlgError as exc:
                    raise CurvatureError("factor eigendecomposition failed") from exc
                state.a_eigvals = np.clip(la, 0.0, None)
                state.a_eigvecs = qa
                state.g_eigvals = np.clip(lg, 0.0, None)
                state.g_eigvecs = qg
                if tau == 0.0 and float(state.a_eigvals.min() * state.g_eigvals.min()) <= 0.0:
                    raise CurvatureError("singular factors need tau > 0")
            else:
                root = math.sqrt(tau)
                state.g_fac = SpdFactor(state.g_ema, root)
                state.a_fac = SpdFactor(state.a_ema, root)
        self.tau = float(tau)

    def apply_inverse(self, flat_grad: np.ndarray) -> np.ndarray:
        """Map a flat gradient through the cached damped inverse, layer by layer."""
        if self.layers is None or self.tau is None:
            raise StateError("inverse not prepared")
        blocks = self.net.flat_to_blocks(np.asarray(flat_grad, dtype=float))
        out = np.empty_like(np.asarray(flat_grad, dtype=float))
        out_blocks = self.net.flat_to_blocks(out)
        for state, grad_mat, out_mat in zip(self.layers, blocks, out_blocks):
            if self.damping == "exact":
                v = state.g_eigvecs.T @ grad_mat @ state.a_eigvecs
                denom = state.g_eigvals[:, None] * state.a_eigvals[None, :] + self.tau
                out_mat[:] = state.g_eigvecs @ (v / denom) @ state.a_eigvecs.T
            else:
                half = spd_solve(state.g_fac, grad_mat)
                out_mat[:] = spd_solve(state.a_fac, half.T).T
        if not np.all(np.isfinite(out)):
            raise CurvatureError("natural direction is non-finite")
        return out

    def natural_direction(self, flat_grad: np.ndarray, tau: float) -> np.ndarray:
        """Damped natural direction, re-deriving the cache if tau moved > 1e-12."""
        if self.tau is None or abs(tau - self.tau) > TAU_CACHE_TOL:
            self.prepare_inverse(tau)
        return self.apply_inverse(flat_grad)
