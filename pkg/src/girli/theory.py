"""Constants from the local convergence analysis of GIRLI.

Given a ball radius ``rho``, an operator bound ``L``, the tangential-cone
constant ``eta``, an auxiliary ``kappa in (0, 1)`` and the largest damping
factor ``lambda_max``, these functions produce the radius ``c(rho)`` of the
ball the iterates stay in, the positivity constant ``E``, the smallest
admissible discrepancy factor ``tau_min`` and the constant ``D(tau)`` of the
residual-sum bound.

The analysis is stated for the unscaled iteration ``u - F'(u)^*(F(u) - y)``.
A step size ``omega`` is absorbed into the operator, so the operator bound
relevant here is ``sqrt(omega) * |R|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .operators import LinearOperator, estimate_operator_norm

__all__ = [
    "TheoryConstants",
    "AssumptionReport",
    "compute_c_rho",
    "compute_E",
    "compute_tau_min",
    "compute_D",
    "residual_sum_bound",
    "ball_recurrence_defect",
    "tangential_cone_defect",
    "check_assumptions",
    "L_SAFETY",
]

L_SAFETY = 1.01


def compute_c_rho(rho: float, L: float, kappa: float, lambda_max: float) -> float:
    """``rho (1 - lm + sqrt(1 + lm (2 - lm) L^2 / kappa^2)) / (2 - lm)``."""
    if not (rho > 0 and L > 0 and kappa > 0 and lambda_max >= 0):
        raise ValueError("compute_c_rho: rho, L, kappa must be positive and lambda_max >= 0")
    if not lambda_max < 1:
        raise ValueError("compute_c_rho: lambda_max must be < 1")
    lm = lambda_max
    return rho * (1.0 - lm + math.sqrt(1.0 + lm * (2.0 - lm) * L**2 / kappa**2)) / (2.0 - lm)


def compute_E(L: float, eta: float, lam: float, kappa: float) -> float:
    """``2 - L^2 - 2 eta - 2 lam (1 - eta) - kappa^2``; positivity is the caller's check."""
    return 2.0 - L**2 - 2.0 * eta - 2.0 * lam * (1.0 - eta) - kappa**2


def compute_tau_min(lambda_max: float, eta: float, E: float) -> float:
    """Lower bound ``2 (1 - lambda_max)(1 + eta) / E`` for the discrepancy factor."""
    if not E > 0:
        raise ValueError(f"E = {E} <= 0: hypotheses of the ball lemma violated")
    return 2.0 * (1.0 - lambda_max) * (1.0 + eta) / E


def compute_D(E: float, lam: float, eta: float, tau: float) -> float:
    """``E - 2 (1 - lam)(1 + eta) / tau``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return E - 2.0 * (1.0 - lam) * (1.0 + eta) / tau


@dataclass(frozen=True)
class TheoryConstants:
    """Inputs of the convergence analysis with the derived quantities.

    ``E`` is evaluated at ``lambda_max`` unless ``lam`` is passed
    explicitly to :meth:`E_at`.
    """

    rho: float
    L: float
    eta: float = 0.0
    kappa: float = 0.5
    lambda_max: float = 0.01

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not self.L > 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if not 0 <= self.eta < 0.5:
            raise ValueError(f"eta must lie in [0, 1/2), got {self.eta}")
        if not 0 < self.kappa < 1:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if not 0 < self.lambda_max < 1:
            raise ValueError(f"lambda_max must lie in (0, 1), got {self.lambda_max}")

    @property
    def c_rho(self) -> float:
        return compute_c_rho(self.rho, self.L, self.kappa, self.lambda_max)

    @property
    def E(self) -> float:
        return compute_E(self.L, self.eta, self.lambda_max, self.kappa)

    def E_at(self, lam: float) -> float:
        return compute_E(self.L, self.eta, lam, self.kappa)

    @property
    def tau_min(self) -> float:
        return compute_tau_min(self.lambda_max, self.eta, self.E)

    def D(self, tau: float) -> float:
        return compute_D(self.E, self.lambda_max, self.eta, tau)

    @property
    def sufficient_residual_factor(self) -> float:
        """Residuals ``>= factor * delta`` keep the next iterate in the ball."""
        return self.tau_min

    def as_dict(self) -> dict:
        out = asdict(self)
        out["c_rho"] = self.c_rho
        out["E"] = self.E
        out["tau_min"] = self.tau_min if self.E > 0 else None
        return out


def residual_sum_bound(constants: TheoryConstants, lambda_partial_sum: float, tau: float) -> float:
    """Upper envelope ``rho^2 / D [1 + 2 (1 + L^2/kappa^2) sum lam_k]`` of the
    squared residuals accumulated before the discrepancy stop."""
    D = constants.D(tau)
    if not D > 0:
        raise ValueError(f"D = {D} <= 0 for tau = {tau}; the residual-sum bound does not apply")
    c = constants
    return c.rho**2 / D * (1.0 + 2.0 * (1.0 + c.L**2 / c.kappa**2) * lambda_partial_sum)


def ball_recurrence_defect(constants: TheoryConstants, lam: float | None = None) -> float:
    """``c^2 - [(1-l)^2 c^2 + l^2 (1 + L^2/k^2) rho^2 + 2 l (1-l) rho c]`` at
    ``c = c(rho)``; zero at ``l = lambda_max`` and nonnegative below it."""
    k = constants
    lam = k.lambda_max if lam is None else lam
    c = k.c_rho
    rhs = ((1 - lam) ** 2 * c**2 + lam**2 * (1 + k.L**2 / k.kappa**2) * k.rho**2
           + 2 * lam * (1 - lam) * k.rho * c)
    return c**2 - rhs


def tangential_cone_defect(op: LinearOperator, trials: int = 8, seed: int = 0) -> float:
    """Largest ``|F(u) - F(v) - F'(u)(u - v)| / |F(u) - F(v)|`` over random
    pairs, with ``F = op`` and ``F' = op``.  Zero up to rounding for a linear
    operator."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.domain_shape)
        v = rng.standard_normal(op.domain_shape)
        fu, fv = op.apply(u), op.apply(v)
        diff = fu - fv
        den = np.linalg.norm(diff)
        if den == 0:
            continue
        worst = max(worst, float(np.linalg.norm(diff - op.apply(u - v)) / den))
    return worst


@dataclass
class AssumptionReport:
    rho: float
    dist_truth_u0: float
    dist_truth_mean: float
    dist_truth_gm: float | None
    truth_in_ball: bool
    mean_within_rho: bool
    gm_within_rho: bool | None
    operator_norm: float | None
    operator_bound_ok: bool | None
    tcc_defect: float | None
    eta_zero_ok: bool | None
    lambda_max_ok: bool
    E: float
    E_positive: bool
    tau: float | None
    tau_min: float | None
    tau_ok: bool | None

    @property
    def passed(self) -> bool:
        checks = [self.truth_in_ball, self.mean_within_rho, self.lambda_max_ok,
                  self.E_positive, self.operator_bound_ok, self.eta_zero_ok, self.tau_ok]
        return all(c for c in checks if c is not None)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def check_assumptions(priors, truth, u0, constants: TheoryConstants, *, op=None,
                      omega: float = 1.0, tau: float | None = None, op_norm: float | None = None,
                      gm=None) -> AssumptionReport:
    """Diagnose whether a synthetic configuration meets the convergence
    hypotheses.  Nothing is raised; every check is reported.

    ``op`` (with step size ``omega``) is compared against ``constants.L`` as
    ``sqrt(omega) * |op| <= L``; its tangential-cone defect decides whether
    ``eta = 0`` is admissible.
    """
    truth = np.asarray(truth, dtype=np.float64)
    u0 = np.asarray(u0, dtype=np.float64)
    k = constants
    mean = priors.mean
    d0 = float(np.linalg.norm(truth - u0))
    dm = float(np.linalg.norm(truth - mean))
    dg = None
    if gm is None:
        try:
            gm = priors.geometric_mean
        except ValueError:
            gm = None
    if gm is not None:
        dg = float(np.linalg.norm(truth - gm))

    norm = ok_norm = tcc = eta_ok = None
    if op is not None:
        if op_norm is None:
            op_norm = estimate_operator_norm(op, iterations=50)
        norm = math.sqrt(omega) * op_norm
        ok_norm = norm <= k.L
        tcc = tangential_cone_defect(op)
        eta_ok = tcc <= max(k.eta, 1e-10)

    E = k.E
    tau_min = compute_tau_min(k.lambda_max, k.eta, E) if E > 0 else None
    tau_ok = None
    if tau is not None:
        tau_ok = tau_min is not None and tau > tau_min
    return AssumptionReport(
        rho=k.rho,
        dist_truth_u0=d0,
        dist_truth_mean=dm,
        dist_truth_gm=dg,
        truth_in_ball=d0 < k.rho,
        mean_within_rho=dm < k.rho,
        gm_within_rho=None if dg is None else dg < k.rho,
        operator_norm=norm,
        operator_bound_ok=ok_norm,
        tcc_defect=tcc,
        eta_zero_ok=eta_ok,
        lambda_max_ok=0 < k.lambda_max < 1,
        E=E,
        E_positive=E > 0,
        tau=tau,
        tau_min=tau_min,
        tau_ok=tau_ok,
    )
