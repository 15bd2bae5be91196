"""Per-step linear systems for variance- and energy-controlling guidance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class NonFiniteInputError(ValueError):
    pass


@dataclass
class ControlSystem:
    A: np.ndarray
    c: np.ndarray
    mode: str
    ridge: float = 1e-6
    theta: Optional[np.ndarray] = None
    warning: Optional[str] = None

    @property
    def n(self):
        return self.c.shape[0]


def _check(weights, *arrays):
    w = np.asarray(weights, dtype=float)
    out = [np.asarray(a, dtype=float) for a in arrays]
    for a in (w, *out):
        if not np.all(np.isfinite(a)):
            raise NonFiniteInputError("control system inputs contain non-finite values")
    return w, out


def assemble_vcg(weights, g_vals, h_vals, ridge=1e-6) -> ControlSystem:
    """Weighted least squares for ``min_theta Var_w[g + h theta]``.

    ``h_vals`` is ``(N, n)``.  Moments are centred with the weighted means.
    """
    w, (g, h) = _check(weights, g_vals, h_vals)
    h = h.reshape(len(g), -1)
    gc = g - w @ g
    hc = h - w @ h
    A = (hc * w[:, None]).T @ hc
    c = -(hc.T @ (w * gc))
    return ControlSystem(0.5 * (A + A.T), c, "VCG", ridge)


def assemble_ecg(weights, g_vals, s_vals, grad_s_vals, ridge=1e-6) -> ControlSystem:
    """Ritz system ``A_ij = E[grad s_i . grad s_j]``, ``c_i = E[(g - E g) s_i]``.

    ``s_vals`` is ``(n, N)`` and ``grad_s_vals`` is ``(n, N, d)``.
    """
    w, (g, s, gs) = _check(weights, g_vals, s_vals, grad_s_vals)
    s = s.reshape(-1, len(g))
    gs = gs.reshape(s.shape[0], len(g), -1)
    gc = g - w @ g
    flat = gs * np.sqrt(w)[None, :, None]
    flat = flat.reshape(s.shape[0], -1)
    A = flat @ flat.T
    c = s @ (w * gc)
    return ControlSystem(0.5 * (A + A.T), c, "ECG", ridge)


def solve_regularized(sys: ControlSystem):
    """``theta = (A + ridge tr(A)/n I)^{-1} c`` by Cholesky; zero on failure."""
    n = sys.n
    if n == 0:
        sys.theta = np.zeros(0)
        return sys.theta
    A = sys.A + sys.ridge * (np.trace(sys.A) / n) * np.eye(n)
    try:
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(sys.c)):
            raise LinAlgError("non-finite system")
        theta = cho_solve(cho_factor(A, lower=True, check_finite=False), sys.c, check_finite=False)
        if not np.all(np.isfinite(theta)):
            raise LinAlgError("non-finite solution")
    except LinAlgError as exc:
        theta = np.zeros(n)
        sys.warning = f"control solve failed ({exc}); using zero control"
    sys.theta = theta
    return theta


@dataclass
class ControlState:
    """Per-step coefficients of the current round and their running sum."""

    M: int
    n: int
    theta: np.ndarray = field(init=False)
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        self.theta = np.zeros((self.M, self.n))
        self.cumulative = np.zeros((self.M, self.n))

    def record(self, k, theta):
        self.theta[k] = theta

    def absorb(self):
        """Fold the current round into the cumulative coefficients."""
        self.cumulative = self.cumulative + self.theta
        self.theta = np.zeros_like(self.theta)
        return self.cumulative
