"""Desk-scale objectives with exact gradients.

Every problem exposes per-sample losses, so the mean gradient over a
uniformly drawn batch is an unbiased estimate of the full gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..core import DeterministicRng
from ..errors import ConfigError


class Problem:
    name = "problem"
    exact_gradient_available = True

    d: int
    n_samples: int | None
    tensor_sizes: list[int]

    def loss(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def batch_gradient(self, x, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError

    def optimal_loss(self) -> float | None:
        return None


@dataclass
class Quadratic(Problem):
    """``F(x) = 1/2 (x - x*)^T A (x - x*)``, optionally with zero-mean per-sample noise.

    Sample ``i`` has gradient ``A (x - x*) + xi_i`` with ``sum_i xi_i = 0``,
    so the full gradient stays exact.
    """

    A: np.ndarray
    x_star: np.ndarray
    x0: np.ndarray
    noise: np.ndarray | None = None
    name = "quadratic"

    def __post_init__(self):
        self.d = self.x_star.size
        self.n_samples = None if self.noise is None else self.noise.shape[0]
        self.tensor_sizes = [self.d]

    @classmethod
    def make(cls, d: int = 50, cond: float = 100.0, rotate: bool = False, noise_scale: float = 0.0,
             n_samples: int = 1000, seed: int = 0) -> "Quadratic":
        gen = DeterministicRng(seed, stage="problem").generator()
        eig = np.logspace(0.0, np.log10(cond), d)
        if rotate:
            q, _ = np.linalg.qr(gen.standard_normal((d, d)))
            A = (q * eig) @ q.T
            A = (A + A.T) / 2
        else:
            A = np.diag(eig)
        x_star = gen.standard_normal(d)
        x0 = gen.standard_normal(d)
        noise = None
        if noise_scale > 0:
            noise = gen.standard_normal((n_samples, d)) * noise_scale
            noise -= noise.mean(axis=0)
        return cls(A, x_star, x0, noise)

    def loss(self, x) -> float:
        r = np.asarray(x, dtype=np.float64) - self.x_star
        return 0.5 * float(r @ self.A @ r)

    def gradient(self, x) -> np.ndarray:
        r = np.asarray(x, dtype=np.float64) - self.x_star
        return self.A @ r

    def batch_gradient(self, x, idx: np.ndarray) -> np.ndarray:
        g = self.gradient(x)
        if self.noise is not None and len(idx):
            g = g + self.noise[idx].mean(axis=0)
        return g

    def initial_point(self) -> np.ndarray:
        return self.x0.copy()

    def optimal_loss(self) -> float:
        return 0.0

    def coordinate_lipschitz(self) -> np.ndarray:
        """Row l1 norms of ``A``: ``|grad_j(x) - grad_j(y)| <= L_j max_k |x_k - y_k|``."""
        return np.abs(self.A).sum(axis=1)

    def noise_sigma(self) -> np.ndarray:
        """Per-coordinate standard deviation of a single-sample gradient."""
        if self.noise is None:
            return np.zeros(self.d)
        return self.noise.std(axis=0)


@dataclass
class Logistic(Problem):
    """L2-regularised logistic regression with labels in ``{-1, +1}``."""

    X: np.ndarray
    y: np.ndarray
    reg: float = 1e-3
    name = "logistic"

    def __post_init__(self):
        self.n_samples, self.d = self.X.shape
        self.tensor_sizes = [self.d]

    @classmethod
    def make(cls, d: int = 100, n_samples: int = 10_000, reg: float = 1e-3, seed: int = 0) -> "Logistic":
        gen = DeterministicRng(seed, stage="problem").generator()
        X = gen.standard_normal((n_samples, d))
        w = gen.standard_normal(d) / np.sqrt(d) * 3.0
        y = np.where(gen.random(n_samples) < expit(X @ w), 1.0, -1.0)
        return cls(X, y, reg)

    def _loss_rows(self, x, idx=None):
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        return X, y, y * (X @ x)

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        _, _, z = self._loss_rows(x)
        return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.reg * x @ x)

    def _grad(self, x, idx=None):
        x = np.asarray(x, dtype=np.float64)
        X, y, z = self._loss_rows(x, idx)
        coef = -y * expit(-z)
        return X.T @ coef / len(y) + self.reg * x

    def gradient(self, x) -> np.ndarray:
        return self._grad(x)

    def batch_gradient(self, x, idx: np.ndarray) -> np.ndarray:
        return self._grad(x, idx)

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.d)


@dataclass
class MLP(Problem):
    """One hidden layer regression network ``y = w2 . act(W1 u + b1) + b2`` with squared loss.

    Parameters are flattened as ``[W1, b1, w2, b2]``; each is one tensor.
    """

    U: np.ndarray
    t: np.ndarray
    hidden: int
    activation: str = "tanh"
    seed: int = 0
    name = "mlp"

    def __post_init__(self):
        self.n_samples, self.inputs = self.U.shape
        h, p = self.hidden, self.inputs
        self.tensor_sizes = [h * p, h, h, 1]
        self.d = sum(self.tensor_sizes)
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @classmethod
    def make(cls, inputs: int = 8, hidden: int = 16, n_samples: int = 2000, activation: str = "tanh",
             seed: int = 0) -> "MLP":
        gen = DeterministicRng(seed, stage="problem").generator()
        U = gen.standard_normal((n_samples, inputs))
        teacher = gen.standard_normal(inputs)
        t = np.sin(U @ teacher / np.sqrt(inputs)) + 0.1 * gen.standard_normal(n_samples)
        return cls(U, t, hidden, activation, seed)

    def unpack(self, x):
        h, p = self.hidden, self.inputs
        x = np.asarray(x, dtype=np.float64)
        W1 = x[: h * p].reshape(h, p)
        b1 = x[h * p: h * p + h]
        w2 = x[h * p + h: h * p + 2 * h]
        b2 = x[-1]
        return W1, b1, w2, b2

    def _act(self, a):
        if self.activation == "tanh":
            z = np.tanh(a)
            return z, 1 - z * z
        return np.maximum(a, 0), (a > 0).astype(np.float64)

    def _forward(self, x, idx=None):
        U = self.U if idx is None else self.U[idx]
        t = self.t if idx is None else self.t[idx]
        W1, b1, w2, b2 = self.unpack(x)
        z, dz = self._act(U @ W1.T + b1)
        return U, t, z, dz, w2, z @ w2 + b2

    def loss(self, x) -> float:
        _, t, _, _, _, out = self._forward(x)
        return float(0.5 * np.mean((out - t) ** 2))

    def _grad(self, x, idx=None):
        U, t, z, dz, w2, out = self._forward(x, idx)
        r = (out - t) / len(t)
        g_w2 = z.T @ r
        g_b2 = r.sum()
        delta = np.outer(r, w2) * dz
        g_W1 = delta.T @ U
        g_b1 = delta.sum(axis=0)
        return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])

    def gradient(self, x) -> np.ndarray:
        return self._grad(x)

    def batch_gradient(self, x, idx: np.ndarray) -> np.ndarray:
        return self._grad(x, idx)

    def initial_point(self) -> np.ndarray:
        gen = DeterministicRng(self.seed, stage="init").generator()
        h, p = self.hidden, self.inputs
        W1 = gen.standard_normal((h, p)) / np.sqrt(p)
        w2 = gen.standard_normal(h) / np.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), w2, [0.0]])


def finite_difference_check(problem: Problem, x, h: float) -> float:
    """Max over coordinates of the relative gap between central differences and the gradient.

    Coordinates whose gradient is tiny compared with the largest one are
    measured relative to ``1e-8 * max(1, max_j |g_j|)`` instead.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = problem.gradient(x)
    floor = 1e-8 * max(1.0, float(np.max(np.abs(g))))
    worst = 0.0
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fd = (problem.loss(x + e) - problem.loss(x - e)) / (2 * h)
        worst = max(worst, abs(fd - g[j]) / max(abs(fd), abs(g[j]), floor))
    return worst


PROBLEMS = {"quadratic": Quadratic, "logistic": Logistic, "mlp": MLP}


def make_problem(name: str, **params) -> Problem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}") from None
    try:
        return cls.make(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
