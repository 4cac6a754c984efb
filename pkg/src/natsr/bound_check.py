"""Randomized empirical validation of the update-norm ceiling.

The exact path builds the true damped curvature solve for random small
networks and random likelihood/damping settings and confirms that the step
norm never exceeds (1/4) sqrt((nu+1)(nu+3) m / (tau nu)). The solve runs in
output space, J^T (kappa J J^T + tau I)^(-1) score, which equals the
weight-space form (J^T kappa J + tau I)^(-1) J^T score at a fraction of the
cost. A constructed extremal configuration (singular value at sqrt(tau/kappa),
error at s sqrt(nu)) attains the ceiling, so the bound is tight.

The approximate production path (MC factors, layerwise Kronecker structure) is
run through the same ratio and reported, not asserted: the ceiling is a
property of the exact curvature, and the factored approximation can exceed it
by a modest factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kfac import KfacEngine, bound_value, mc_fisher_factors, t_output_fisher_kappa
from .likelihood import StudentTSpec, t_score_output
from .linalg import SpdFactor, spd_solve
from .network import Network, NetworkSpec
from .seeding import as_generator


@dataclass(frozen=True)
class BoundReport:
    trials: int
    violations: int
    max_ratio: float
    mean_ratio: float
    extremal_ratio: float
    kfac_trials: int
    kfac_max_ratio: float

    def lines(self) -> list[str]:
        return [
            f"exact-path trials: {self.trials}",
            f"violations (ratio > 1): {self.violations}",
            f"max ratio: {self.max_ratio:.6f}",
            f"mean ratio: {self.mean_ratio:.6f}",
            f"extremal-case ratio: {self.extremal_ratio:.6f}",
            f"kfac-path trials: {self.kfac_trials}",
            f"kfac-path max ratio (reported, not asserted): {self.kfac_max_ratio:.6f}",
        ]


def exact_damped_update(net: Network, x, score, spec: StudentTSpec, tau: float) -> np.ndarray:
    """(J^T kappa J + tau I)^(-1) J^T score via the m x m output-space system."""
    jac = net.jacobian(x)
    kappa = t_output_fisher_kappa(spec)
    gram = SpdFactor(kappa * (jac @ jac.T), tau)
    return jac.T @ spd_solve(gram, np.asarray(score, dtype=float))


def _random_net(rng, max_layers: int, max_width: int) -> tuple[Network, int, int]:
    depth = int(rng.integers(1, max_layers + 1))
    input_dim = int(rng.integers(1, max_width + 1))
    hidden = tuple(int(rng.integers(1, max_width + 1)) for _ in range(depth - 1))
    output_dim = int(rng.integers(1, max_width + 1))
    activation = "tanh" if rng.random() < 0.5 else "relu"
    spec = NetworkSpec(input_dim=input_dim, hidden_dims=hidden, output_dim=output_dim, activation=activation)
    return Network.initialize(spec, rng), input_dim, output_dim


def _random_setting(rng) -> tuple[float, float, float]:
    nu = 10.0 ** rng.uniform(math.log10(2.0), math.log10(500.0))
    s2 = 10.0 ** rng.uniform(-3.0, 3.0)
    tau = 10.0 ** rng.uniform(-2.0, 1.0)
    return nu, s2, tau


def _random_errors(rng, m: int, spec: StudentTSpec) -> np.ndarray:
    # mix error magnitudes around the score's peak at s*sqrt(nu)
    peak = spec.scale * math.sqrt(spec.nu)
    mode = rng.integers(0, 4)
    scales = (0.1 * spec.scale, spec.scale, peak, 10.0 * peak)
    return rng.normal(0.0, scales[mode], size=m)


def run_exact_bound_trials(trials: int, max_layers: int = 3, max_width: int = 16, seed=0) -> dict:
    rng = as_generator(seed)
    ratios = np.empty(trials)
    for i in range(trials):
        net, input_dim, m = _random_net(rng, max_layers, max_width)
        nu, s2, tau = _random_setting(rng)
        spec = StudentTSpec(nu, s2)
        x = rng.normal(size=input_dim)
        e = _random_errors(rng, m, spec)
        update = exact_damped_update(net, x, t_score_output(e, spec), spec, tau)
        ratios[i] = np.linalg.norm(update) / bound_value(spec, m, tau)
    return {
        "trials": trials,
        "violations": int(np.sum(ratios > 1.0)),
        "max_ratio": float(ratios.max()),
        "mean_ratio": float(ratios.mean()),
    }


def extremal_case_ratio(nu: float = 50.0, s2: float = 1.0, tau: float = 1.0, p: int = 12, seed=0) -> float:
    """Ratio of the constructed worst case; approaches 1 by design.

    A single-output linear map whose only singular value sits at
    sqrt(tau/kappa), probed with the error that maximizes the score.
    """
    rng = as_generator(seed)
    spec = StudentTSpec(nu, s2)
    kappa = t_output_fisher_kappa(spec)
    direction = rng.normal(size=p)
    direction /= np.linalg.norm(direction)
    jac = (math.sqrt(tau / kappa) * direction)[None, :]
    score = t_score_output(np.array([spec.scale * math.sqrt(nu)]), spec)
    gram = SpdFactor(kappa * (jac @ jac.T), tau)
    update = jac.T @ spd_solve(gram, score)
    return float(np.linalg.norm(update) / bound_value(spec, 1, tau))


def run_kfac_bound_trials(trials: int, max_layers: int = 3, max_width: int = 8, k: int = 50, seed=0) -> dict:
    """Ratio of the layerwise-factored production step to the exact-path ceiling."""
    rng = as_generator(seed)
    ratios = np.empty(trials)
    for i in range(trials):
        net, input_dim, m = _random_net(rng, max_layers, max_width)
        nu, s2, tau = _random_setting(rng)
        spec = StudentTSpec(nu, s2)
        x = rng.normal(size=input_dim)
        e = _random_errors(rng, m, spec)
        pred, cache = net.forward(x[None, :])
        grad = net.backward(cache, t_score_output(e, spec)[None, :], weights=[1.0])
        engine = KfacEngine(net, damping="exact")
        factors = mc_fisher_factors(net, x[None, :], None, spec, k, 0.0, rng)
        engine.update_factor_emas(factors, 1.0)
        direction = engine.natural_direction(grad, tau)
        ratios[i] = np.linalg.norm(direction) / bound_value(spec, m, tau)
    return {"trials": trials, "max_ratio": float(ratios.max()), "mean_ratio": float(ratios.mean())}


def full_report(trials: int, max_layers: int = 3, max_width: int = 16, seed=0, kfac_trials: int = 200) -> BoundReport:
    exact = run_exact_bound_trials(trials, max_layers, max_width, seed)
    extremal = extremal_case_ratio(seed=seed)
    kfac = run_kfac_bound_trials(kfac_trials, max_layers, min(max_width, 8), seed=seed + 1)
    return BoundReport(
        trials=exact["trials"],
        violations=exact["violations"],
        max_ratio=exact["max_ratio"],
        mean_ratio=exact["mean_ratio"],
        extremal_ratio=extremal,
        kfac_trials=kfac["trials"],
        kfac_max_ratio=kfac["max_ratio"],
    )
