"""Trajectory checks that compare simulator runs against the analytic bounds."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..errors import OracleUnavailable
from .bounds import lemma_ef_residual_bound


@dataclass(frozen=True)
class Snapshot:
    """State of one optimizer step ``t``.

    ``m_hat`` is the bias-corrected first moment after the step's update,
    ``p`` the aggregated gradient that produced it, ``grad`` the exact
    gradient at the iterate where ``p`` was evaluated, ``eta`` the step size.
    """

    m_hat: np.ndarray | None
    p: np.ndarray
    grad: np.ndarray | None
    eta: float


@dataclass
class MomentGapReport:
    checks: int
    violations: int
    worst_margin: float  # min over checks of (bound - gap); negative means violated
    first_violation: tuple[int, int] | None = None


def lemma_moment_gap_monitor(trajectory: Sequence[Snapshot], lipschitz, beta1: float, alpha_u: float,
                             rel_slack: float = 1e-9) -> MomentGapReport:
    """Check the per-coordinate first-moment gap bound along a trajectory.

    ``lipschitz[j]`` must bound ``|grad_j(x) - grad_j(y)|`` by
    ``lipschitz[j] * max_k |x_k - y_k|``; for a quadratic ``A`` the row
    l1 norms qualify (and equal the diagonal when ``A`` is diagonal).
    """
    L = np.asarray(lipschitz, dtype=np.float64)
    checks = violations = 0
    worst = np.inf
    first = None
    weighted = None  # sum_{tau >= 1} beta1**tau * err_{t - tau}
    prev_err = None
    eta_max = 0.0
    for t, snap in enumerate(trajectory, start=1):
        if snap.grad is None:
            raise OracleUnavailable(f"step {t} has no exact gradient")
        err = np.abs(np.asarray(snap.p, dtype=np.float64) - snap.grad)
        weighted = np.zeros_like(err) if prev_err is None else beta1 * (prev_err + weighted)
        tail = weighted / (1 - beta1**t)
        drift = beta1 / (1 - beta1) * L * eta_max * alpha_u
        bound = drift + err + tail
        m_hat = np.asarray(snap.m_hat, dtype=np.float64)
        gap = np.abs(m_hat - snap.grad)
        margin = bound - gap
        # rounding in m_hat scales with its magnitude, not with the gap
        scale = np.maximum(np.maximum(bound, np.abs(m_hat)), np.abs(snap.grad))
        slack = rel_slack * np.maximum(scale, 1e-300)
        bad = np.flatnonzero(margin < -slack)
        checks += gap.size
        violations += bad.size
        if bad.size and first is None:
            first = (t, int(bad[0]))
        worst = min(worst, float(margin.min()))
        eta_max = max(eta_max, snap.eta)
        prev_err = err
    return MomentGapReport(checks, violations, worst if checks else 0.0, first)


@dataclass
class ResidualReport:
    checks: int
    violations: int
    worst_ratio: float  # max observed/bound


def check_ef_residuals(worker_norms: Sequence[Sequence[float]], server_norms: Sequence[float],
                       delta: float, d: int, G: float, combined_norms: Sequence[float] | None = None
                       ) -> ResidualReport:
    """Compare per-step residual norms with the error-feedback lemma.

    ``worker_norms[t]`` lists every worker's ``||e||`` after step ``t``.
    """
    wb, sb, cb = lemma_ef_residual_bound(delta, d, G)
    checks = violations = 0
    worst = 0.0
    rows = [(w, s, None if combined_norms is None else combined_norms[t])
            for t, (w, s) in enumerate(zip(worker_norms, server_norms))]
    for ws, s, c in rows:
        pairs = [(x, wb) for x in ws] + [(s, sb)] + ([] if c is None else [(c, cb)])
        for obs, bound in pairs:
            checks += 1
            if obs > bound * (1 + 1e-6):
                violations += 1
            if bound > 0:
                worst = max(worst, obs / bound)
            elif obs > 0:
                worst = np.inf
    return ResidualReport(checks, violations, worst)
