"""Landweber-type iteration schemes and the shared iteration engine.

All schemes share the Landweber gradient ``g_k = R^*(R u_k - y^delta)`` and
differ in the stabilizing term:

=============  ==============================================================
LANDWEBER      ``u - w g``
IRLI           ``u - w g - lam_k (u - u_anchor)``
IRLI_REVISED   ``u - w g - mu (u - u^(i))`` with ``i = k mod n``
GIRLI          ``(1 - lam_k) u - w g + lam_k mean(u^(i))``
GIRLI_ADAPT    as GIRLI, mean taken over priors surviving pruning
GIRLI_GM       ``(1 - lam_k) u - w g + lam_k gm(u^(i))``
DDIRLI         ``u - w g - beta_k A^*(A u - y^delta)``, ``beta_k = C |R u - y^delta|^2``
=============  ==============================================================

The IRLI_REVISED damping acts on the current noisy iterate ``u^delta_k``.
"""

from __future__ import annotations

import enum
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .operators import LinearOperator, Sinogram
from .priors import PriorSet, build_handcrafted_operator, prune_priors

logger = logging.getLogger(__name__)

__all__ = [
    "SchemeKind",
    "LambdaSequence",
    "StoppingRule",
    "AdaptConfig",
    "SchemeConfig",
    "IterationRecord",
    "IterationTrace",
    "StopReason",
    "make_lambda",
    "step_landweber",
    "step_girli",
    "step_girli_gm",
    "step_irli",
    "step_irli_revised",
    "step_ddirli",
    "run_scheme",
]


class SchemeKind(str, enum.Enum):
    LANDWEBER = "LANDWEBER"
    IRLI = "IRLI"
    IRLI_REVISED = "IRLI_REVISED"
    GIRLI = "GIRLI"
    GIRLI_ADAPT = "GIRLI_ADAPT"
    GIRLI_GM = "GIRLI_GM"
    DDIRLI = "DDIRLI"

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> "SchemeKind":
        key = str(name).strip().upper().replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown scheme {name!r}; expected one of {[k.value for k in cls]}")


_DISPLAY = {
    SchemeKind.LANDWEBER: "LANDWEBER",
    SchemeKind.IRLI: "IRLI",
    SchemeKind.IRLI_REVISED: "IRLI-revised",
    SchemeKind.GIRLI: "GIRLI",
    SchemeKind.GIRLI_ADAPT: "GIRLI-adapt",
    SchemeKind.GIRLI_GM: "GIRLI-GM",
    SchemeKind.DDIRLI: "DDIRLI",
}


class StopReason(str, enum.Enum):
    DISCREPANCY = "DISCREPANCY"
    MAX_ITER = "MAX_ITER"


@dataclass(frozen=True)
class LambdaSequence:
    """Damping factors ``lam_k``: constant, or ``lambda0 * ratio**k``.

    Every value lies in ``(0, lambda_max]`` with ``lambda_max = lambda0 < 1``.
    """

    kind: str = "CONSTANT"
    lambda0: float = 0.01
    ratio: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in ("CONSTANT", "GEOMETRIC"):
            raise ValueError(f"lambda sequence kind must be CONSTANT or GEOMETRIC, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not 0.0 < self.lambda0 < 1.0:
            raise ValueError(f"lambda0 must lie in (0, 1), got {self.lambda0}")
        if kind == "GEOMETRIC" and not 0.0 < self.ratio < 1.0:
            raise ValueError(f"geometric ratio must lie in (0, 1), got {self.ratio}")

    @property
    def lambda_max(self) -> float:
        return self.lambda0

    @property
    def summable(self) -> bool:
        return self.kind == "GEOMETRIC"

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError(f"iteration index must be >= 0, got {k}")
        if self.kind == "CONSTANT":
            return self.lambda0
        return self.lambda0 * self.ratio**k

    def partial_sum(self, count: int) -> float:
        """``sum_{k < count} lam_k``."""
        if count <= 0:
            return 0.0
        if self.kind == "CONSTANT":
            return self.lambda0 * count
        return self.lambda0 * (1.0 - self.ratio**count) / (1.0 - self.ratio)


def make_lambda(seq: LambdaSequence, k: int) -> float:
    return seq(k)


@dataclass(frozen=True)
class StoppingRule:
    """Discrepancy principle: stop at the first ``k`` with residual ``<= tau*delta``.

    If ``tau_min`` is given (from the convergence constants), ``tau`` must
    exceed it.
    """

    tau: float = 1.1
    delta: float = 0.0
    tau_min: float | None = None

    def __post_init__(self):
        if not self.tau > 1.0:
            raise ValueError(f"tau must be > 1, got {self.tau}")
        if not self.delta >= 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.tau_min is not None and not self.tau > self.tau_min:
            raise ValueError(f"tau = {self.tau} does not exceed tau_min = {self.tau_min}")

    @property
    def threshold(self) -> float:
        return self.tau * self.delta


@dataclass(frozen=True)
class AdaptConfig:
    """GIRLI-adapt pruning: after iteration ``k0``, drop priors at distance ``>= tol``."""

    k0: int = 10
    tol: float = 3.2

    def __post_init__(self):
        if self.k0 < 0:
            raise ValueError(f"k0 must be >= 0, got {self.k0}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class SchemeConfig:
    kind: SchemeKind
    omega: float = 1e-2
    lambda_seq: LambdaSequence = field(default_factory=LambdaSequence)
    mu: float = 1e-3
    ddirli_c: float = 77e-6
    prior_ref: str = "default"
    adapt: AdaptConfig | None = None
    stop: StoppingRule = field(default_factory=StoppingRule)
    max_iterations: int = 1000
    label: str | None = None

    def __post_init__(self):
        self.kind = SchemeKind.parse(self.kind) if not isinstance(self.kind, SchemeKind) else self.kind

    @property
    def name(self) -> str:
        return self.label or self.kind.display

    def validate(self):
        if not self.omega > 0:
            raise ValueError(f"{self.name}: omega must be > 0, got {self.omega}")
        if self.max_iterations < 1:
            raise ValueError(f"{self.name}: max_iterations must be >= 1, got {self.max_iterations}")
        if self.kind is SchemeKind.GIRLI_ADAPT and self.adapt is None:
            raise ValueError(f"{self.name}: GIRLI_ADAPT requires an adapt configuration")
        if self.kind is not SchemeKind.GIRLI_ADAPT and self.adapt is not None:
            raise ValueError(f"{self.name}: adapt is only valid for GIRLI_ADAPT")
        if self.kind is SchemeKind.IRLI_REVISED and not self.mu > 0:
            raise ValueError(f"{self.name}: mu must be > 0, got {self.mu}")
        if self.kind is SchemeKind.DDIRLI and not self.ddirli_c >= 0:
            raise ValueError(f"{self.name}: ddirli_c must be >= 0, got {self.ddirli_c}")
        return self


@dataclass
class IterationRecord:
    k: int
    residual_norm: float
    error_norm: float | None
    active_prior_count: int | None
    wall_time: float


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    stop_index: int = 0
    stop_reason: StopReason = StopReason.MAX_ITER
    active_indices: list[int] | None = None
    events: list[dict] = field(default_factory=list)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual_norm for r in self.records])

    @property
    def errors(self) -> np.ndarray:
        return np.array([np.nan if r.error_norm is None else r.error_norm for r in self.records])

    @property
    def active_counts(self) -> list:
        return [r.active_prior_count for r in self.records]

    @property
    def wall_time(self) -> float:
        return self.records[-1].wall_time if self.records else 0.0


# ---------------------------------------------------------------------------
# single steps

def _data(y_d) -> np.ndarray:
    return y_d.values if isinstance(y_d, Sinogram) else np.asarray(y_d, dtype=np.float64)


def _residual(op: LinearOperator, u, y):
    if y.shape != tuple(op.range_shape):
        raise ValueError(f"geometry mismatch: data shape {y.shape}, operator range {op.range_shape}")
    return op.apply(u) - y


def _check_lambda(lam, degenerate, name="lambda_k"):
    lo_ok = lam >= 0.0 if degenerate else lam > 0.0
    if not (lo_ok and lam < 1.0):
        raise ValueError(f"{name} = {lam} outside (0, 1)")


def _landweber(u, g, omega):
    return u - omega * g


def _girli(u, g, omega, lam, anchor):
    return (1.0 - lam) * u - omega * g + lam * anchor


def _irli(u, g, omega, lam, anchor):
    return u - omega * g - lam * (u - anchor)


def _ddirli(u, g, omega, beta, a_grad):
    return u - omega * g - beta * a_grad


def step_landweber(u_k, op: LinearOperator, y_d, omega: float) -> np.ndarray:
    """One Landweber step ``u - omega R^*(R u - y)``."""
    u_k = np.asarray(u_k, dtype=np.float64)
    r = _residual(op, u_k, _data(y_d))
    return _landweber(u_k, op.apply_adjoint(r), omega)


def step_girli(u_k, op, y_d, omega, lambda_k, prior_mean, *, degenerate=False) -> np.ndarray:
    """One GIRLI step towards the arithmetic mean of the priors.

    ``degenerate=True`` admits ``lambda_k = 0`` (reduces to Landweber).
    """
    _check_lambda(lambda_k, degenerate)
    u_k = np.asarray(u_k, dtype=np.float64)
    r = _residual(op, u_k, _data(y_d))
    return _girli(u_k, op.apply_adjoint(r), omega, lambda_k, np.asarray(prior_mean))


def step_girli_gm(u_k, op, y_d, omega, lambda_k, prior_gm, *, degenerate=False) -> np.ndarray:
    """One GIRLI-GM step; identical to GIRLI with the geometric-mean prior."""
    return step_girli(u_k, op, y_d, omega, lambda_k, prior_gm, degenerate=degenerate)


def step_irli(u_k, op, y_d, omega, lambda_k, u0_ref, *, degenerate=False) -> np.ndarray:
    _check_lambda(lambda_k, degenerate)
    u_k = np.asarray(u_k, dtype=np.float64)
    r = _residual(op, u_k, _data(y_d))
    return _irli(u_k, op.apply_adjoint(r), omega, lambda_k, np.asarray(u0_ref))


def step_irli_revised(u_k, op, y_d, omega, mu_k, prior_i) -> np.ndarray:
    if prior_i is None:
        raise ValueError("IRLI-revised needs a prior image (empty prior set)")
    u_k = np.asarray(u_k, dtype=np.float64)
    r = _residual(op, u_k, _data(y_d))
    return _irli(u_k, op.apply_adjoint(r), omega, mu_k, np.asarray(prior_i))


def _ddirli_parts(u_k, a_op, y, r):
    if tuple(a_op.domain_shape) != u_k.shape or tuple(a_op.range_shape) != y.shape:
        raise ValueError(
            f"geometry mismatch: A maps {a_op.domain_shape} -> {a_op.range_shape}, "
            f"data needs {u_k.shape} -> {y.shape}"
        )
    return float(np.vdot(r, r)), a_op.apply_adjoint(a_op.apply(u_k) - y)


def step_ddirli(u_k, op, y_d, omega, a_op: LinearOperator, c_coef: float) -> np.ndarray:
    """One DDIRLI step with ``beta_k = c_coef * |R u_k - y|^2``."""
    u_k = np.asarray(u_k, dtype=np.float64)
    y = _data(y_d)
    r = _residual(op, u_k, y)
    rr, a_grad = _ddirli_parts(u_k, a_op, y, r)
    return _ddirli(u_k, op.apply_adjoint(r), omega, c_coef * rr, a_grad)


# ---------------------------------------------------------------------------
# engine

def check_step_size(omega: float, op_norm: float, name: str = "scheme") -> bool:
    """Warn when ``omega * |R|^2 > 1``; returns True when the bound holds."""
    ok = omega * op_norm**2 <= 1.0
    if not ok:
        warnings.warn(
            f"{name}: omega*|R|^2 = {omega * op_norm**2:.4g} > 1; Landweber monotonicity not guaranteed",
            RuntimeWarning,
            stacklevel=2,
        )
    return ok


def run_scheme(
    config: SchemeConfig,
    op: LinearOperator,
    y_d,
    u0,
    priors: PriorSet | None = None,
    truth=None,
    *,
    a_op: LinearOperator | None = None,
    anchor=None,
    op_norm: float | None = None,
):
    """Iterate ``config.kind`` from ``u0`` until the discrepancy principle or
    the iteration cap stops it.

    The discrepancy check happens before every step, so ``k* = 0`` is
    possible.  ``max_iterations`` counts iterates ``u_0 .. u_{cap-1}``; the
    reported stop index is the last computed ``k``.

    Parameters
    ----------
    priors : PriorSet
        Required by GIRLI-family, IRLI_REVISED and (when ``a_op`` is not
        given) DDIRLI.  It is cloned, never mutated.
    truth : array, optional
        Ground truth ``u^dagger``; enables the error column of the trace.
    a_op : LinearOperator, optional
        Data-driven operator for DDIRLI; fitted from ``priors`` if omitted.
    anchor : array, optional
        IRLI anchor ``u^(0)``; defaults to ``u0``.
    op_norm : float, optional
        Known ``|R|``; triggers the step-size warning check.

    Returns
    -------
    (u, trace) : (ndarray, IterationTrace)
    """
    config.validate()
    kind = config.kind
    y = _data(y_d)
    u = np.array(u0, dtype=np.float64, copy=True)
    if u.shape != tuple(op.domain_shape):
        raise ValueError(f"{config.name}: u0 shape {u.shape} does not match operator domain {op.domain_shape}")
    if y.shape != tuple(op.range_shape):
        raise ValueError(f"{config.name}: data shape {y.shape} does not match operator range {op.range_shape}")
    if op_norm is not None:
        check_step_size(config.omega, op_norm, config.name)
    truth = None if truth is None else np.asarray(truth, dtype=np.float64)

    needs_priors = kind in (
        SchemeKind.GIRLI, SchemeKind.GIRLI_ADAPT, SchemeKind.GIRLI_GM, SchemeKind.IRLI_REVISED
    ) or (kind is SchemeKind.DDIRLI and a_op is None)
    if needs_priors and priors is None:
        raise ValueError(f"{config.name}: a prior set is required")
    work = priors.copy() if priors is not None else None
    if work is not None and work.shape != u.shape:
        raise ValueError(f"{config.name}: prior shape {work.shape} does not match u0 {u.shape}")

    if kind is SchemeKind.DDIRLI and a_op is None:
        a_op = build_handcrafted_operator(work)
    if kind is SchemeKind.IRLI:
        anchor = u.copy() if anchor is None else np.asarray(anchor, dtype=np.float64)
    if kind is SchemeKind.GIRLI_GM:
        gm = work.geometric_mean

    lam_seq = config.lambda_seq
    omega = config.omega
    threshold = config.stop.threshold
    track_active = kind is SchemeKind.GIRLI_ADAPT
    trace = IterationTrace()
    start = time.perf_counter()

    for k in range(config.max_iterations):
        r = op.apply(u) - y
        res = float(np.linalg.norm(r))
        if not np.isfinite(res):
            raise FloatingPointError(f"{config.name}: iterate diverged at k={k}")
        err = None if truth is None else float(np.linalg.norm(u - truth))
        trace.records.append(
            IterationRecord(k, res, err, work.n_active if track_active else None,
                            time.perf_counter() - start)
        )
        if res <= threshold:
            trace.stop_reason = StopReason.DISCREPANCY
            break
        if k == config.max_iterations - 1:
            trace.stop_reason = StopReason.MAX_ITER
            break
        g = op.apply_adjoint(r)
        if kind is SchemeKind.LANDWEBER:
            u = _landweber(u, g, omega)
        elif kind is SchemeKind.GIRLI or kind is SchemeKind.GIRLI_ADAPT:
            u = _girli(u, g, omega, lam_seq(k), work.mean)
        elif kind is SchemeKind.GIRLI_GM:
            u = _girli(u, g, omega, lam_seq(k), gm)
        elif kind is SchemeKind.IRLI:
            u = _irli(u, g, omega, lam_seq(k), anchor)
        elif kind is SchemeKind.IRLI_REVISED:
            u = _irli(u, g, omega, config.mu, work.images[k % len(work)])
        elif kind is SchemeKind.DDIRLI:
            rr, a_grad = _ddirli_parts(u, a_op, y, r)
            u = _ddirli(u, g, omega, config.ddirli_c * rr, a_grad)
        if track_active and k + 1 > config.adapt.k0:
            before = work.n_active
            prune_priors(work, u, config.adapt.tol)
            if work.n_active != before:
                trace.events.append({"k": k + 1, "active": work.n_active})

    trace.stop_index = trace.records[-1].k
    if work is not None:
        trace.active_indices = [int(i) for i in np.flatnonzero(work.active)]
        trace.events.extend(work.prune_events)
    logger.debug("%s stopped at k=%d (%s)", config.name, trace.stop_index, trace.stop_reason.value)
    return u, trace
