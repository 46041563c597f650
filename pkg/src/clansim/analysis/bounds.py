"""Closed-form convergence-bound constants for full-precision and compressed CLAN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DegenerateParams, DeltaOutOfRange, NegativeOmega

DEFAULT_CAP = 1e100


@dataclass(frozen=True)
class BoundInputs:
    """Problem and optimizer constants entering the error bound.

    ``lipschitz`` and ``sigma`` are per-coordinate arrays; ``gap`` is
    ``F(x_1) - F(x_*)``.
    """

    lipschitz: np.ndarray
    sigma: np.ndarray
    G: float
    s: int
    n: int
    T: int
    eta: float
    beta1: float
    beta2: float
    eps: float
    alpha_l: float
    alpha_u: float
    gap: float
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        object.__setattr__(self, "lipschitz", np.asarray(self.lipschitz, dtype=np.float64))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64))
        if self.lipschitz.shape != self.sigma.shape or self.lipschitz.ndim != 1:
            raise ValueError("lipschitz and sigma must be 1-D arrays of equal length")
        if np.any(self.lipschitz < 0) or np.any(self.sigma < 0):
            raise ValueError("lipschitz and sigma entries must be nonnegative")
        if min(self.G, self.eta, self.eps, self.gap) < 0:
            raise ValueError("G, eta, eps and gap must be nonnegative")
        if self.T < 1 or self.n < 1 or self.s < 1:
            raise ValueError("T, n and s must be >= 1")
        if not 0 < self.alpha_l <= self.alpha_u:
            raise ValueError("need 0 < alpha_l <= alpha_u")

    @property
    def d(self) -> int:
        return self.lipschitz.size

    @property
    def l1_lipschitz(self) -> float:
        return float(self.lipschitz.sum())

    @property
    def sigma_l1(self) -> float:
        return float(self.sigma.sum())

    def with_(self, **changes) -> "BoundInputs":
        return replace(self, **changes)


@dataclass(frozen=True)
class Constants:
    """``V1``, ``V1' = V1 + eps``, ``V2``, ``V3`` for one gradient estimator."""

    V1: float
    V1p: float
    V2: float
    V3: float
    rate_condition: bool = True
    capped: bool = False


@dataclass(frozen=True)
class BoundReport:
    V1p: float
    V2: float
    V3: float
    gap_term: float
    smoothness_term: float
    v2_term: float
    v3_term: float
    terms: dict = field(default_factory=dict, compare=False)

    @property
    def rhs(self) -> float:
        return self.gap_term + self.smoothness_term + self.v2_term + self.v3_term

    def rows(self) -> list[tuple[str, float]]:
        return [("V1p", self.V1p), ("V2", self.V2), ("V3", self.V3),
                ("gap_term", self.gap_term), ("smoothness_term", self.smoothness_term),
                ("v2_term", self.v2_term), ("v3_term", self.v3_term), ("rhs", self.rhs)]


def _check_betas(b1: float, b2: float) -> None:
    if not (0 <= b1 < 1 and 0 <= b2 < 1) or 1 - b1 < 1e-12 or 1 - b2 < 1e-12:
        raise DegenerateParams(f"beta1={b1}, beta2={b2} too close to 1 (or outside [0, 1))")


def theorem1_rhs(inp: BoundInputs, V1p: float, V2: float, V3: float) -> BoundReport:
    """Right-hand side of the general CLAN error bound, split into its four terms."""
    b1, b2 = inp.beta1, inp.beta2
    _check_betas(b1, b2)
    if min(V1p, V2, V3) < 0:
        raise ValueError("V constants must be nonnegative")
    rd = math.sqrt(inp.d)
    sq2 = math.sqrt(1 - b2)
    gap_term = rd * V1p * inp.gap / (inp.T * inp.eta * inp.alpha_l * (1 - b1) * sq2)
    v3_term = rd * inp.G * V3
    smooth = (inp.eta * rd * V1p * inp.alpha_u**2 * (1 - b1 + 2 * b1**2) * inp.l1_lipschitz
              / (2 * sq2 * (1 - b1) ** 2 * inp.alpha_l))
    v2_term = rd * V1p * inp.alpha_u * ((1 - b1) ** 2 + b1) * V2 / (sq2 * (1 - b1) ** 2 * inp.alpha_l)
    return BoundReport(V1p, V2, V3, gap_term, smooth, v2_term, v3_term)


def report_for(inp: BoundInputs, c: Constants) -> BoundReport:
    return theorem1_rhs(inp, c.V1p, c.V2, c.V3)


def _noise(inp: BoundInputs) -> float:
    return inp.sigma_l1 / math.sqrt(inp.n * inp.s)


def corollary_full_precision(inp: BoundInputs) -> Constants:
    return Constants(V1=inp.G, V1p=inp.G + inp.eps, V2=_noise(inp), V3=0.0)


def corollary_unbiased(inp: BoundInputs, omega: float, variant: str = "main") -> Constants:
    """Constants for two-way unbiased compression without error feedback.

    ``variant="main"`` uses the deviation convention ``E||C(v) - v||^2 <= omega ||v||^2``
    (excess factor ``sqrt(4 omega^2 + 6 omega)``, rate condition ``omega <= 1/T``).
    ``variant="appendix"`` uses the second-moment convention ``E||C(v)||^2 <= omega ||v||^2``
    (excess ``sqrt(omega - 1 + omega (omega - 1) / n)``, needs ``omega >= 1``,
    rate condition ``omega <= 1 + 1/T``).
    """
    if omega < 0:
        raise NegativeOmega(f"omega must be >= 0, got {omega}")
    if variant == "main":
        excess = math.sqrt(4 * omega**2 + 6 * omega)
        ok = omega <= 1 / inp.T
    elif variant == "appendix":
        if omega < 1:
            raise NegativeOmega(f"second-moment omega must be >= 1, got {omega}")
        excess = math.sqrt(omega - 1 + omega * (omega - 1) / inp.n)
        ok = omega <= 1 + 1 / inp.T
    else:
        raise ValueError(f"unknown variant {variant!r}")
    V1 = (1 + inp.d * excess) * inp.G
    return Constants(V1=V1, V1p=V1 + inp.eps, V2=_noise(inp) + inp.d * inp.G * excess, V3=0.0,
                     rate_condition=ok)


def _check_delta(delta: float) -> None:
    if not 0 < delta <= 1:
        raise DeltaOutOfRange(f"delta must lie in (0, 1], got {delta}")


def corollary_biased(inp: BoundInputs, delta: float) -> Constants:
    """Constants for delta-approximate compression with worker and server error feedback."""
    _check_delta(delta)
    a = math.sqrt(1 - delta)
    d, G = inp.d, inp.G
    # 1 - delta rounds to 1 for tiny delta; the closed form then diverges
    V3 = (2 * a / (1 - a)) * (math.sqrt(d) + 2 * (1 + math.sqrt(d) * a / (1 - a))) * G if a < 1 else math.inf
    capped = not V3 <= inp.cap
    if capped:
        V3 = math.inf
    V1 = G + math.sqrt(d) * V3
    T = inp.T
    ok = T > 1 and math.sqrt(T) != 1 and delta >= 1 - 1 / (math.sqrt(T) - 1) ** 2
    return Constants(V1=V1, V1p=V1 + inp.eps, V2=_noise(inp) + math.sqrt(d) * V3, V3=V3,
                     rate_condition=ok, capped=capped)


def lemma_ef_residual_bound(delta: float, d: int, G: float) -> tuple[float, float, float]:
    """``(worker, server, combined)`` norm bounds on the error-feedback residuals."""
    _check_delta(delta)
    a = math.sqrt(1 - delta)
    if a >= 1:
        return math.inf, math.inf, math.inf
    worker = math.sqrt(d) * a / (1 - a) * G
    server = 2 * a / (1 - a) * (1 + math.sqrt(d) * a / (1 - a)) * G
    return worker, server, worker + server
