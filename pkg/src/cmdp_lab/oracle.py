"""Exact frozen-parameter quantities: Lagrangian costs, differential values,
the TD fixed point, the policy gradient, and the critic-coupled gradient proxy.

Everything here is computed by direct linear algebra over the full state and
action spaces; stationary expectations are exact triple sums weighted by
mu(s) pi(a|s) p(s, a, s'). These routines serve as ground truth for the
stochastic learner, so they avoid Monte Carlo entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, StateFeatures, induced_chain, stationary_distribution
from .policy import SoftmaxPolicy

FIXED_POINT_TOL = 1e-9
POISSON_TOL = 1e-10


class FixedPointUndefinedError(ValueError):
    """The TD fixed-point system A v + b = 0 has no informative solution."""


def _check_gamma(model: Cmdp, gamma: np.ndarray) -> np.ndarray:
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gamma.shape != (model.n_constraints,):
        raise ValueError(f"need {model.n_constraints} multipliers, got shape {gamma.shape}")
    if (gamma < 0).any():
        raise ValueError("negative Lagrange multiplier")
    return gamma


def relaxed_cost(model: Cmdp, gamma: np.ndarray, s: int, a: int) -> float:
    """Single-stage cost of the relaxed problem:
    C(s, a, gamma) = d(s,a) + sum_k gamma_k (h_k(s,a) - alpha_k)."""
    gamma = _check_gamma(model, gamma)
    return float(
        model.cost[s, a]
        + gamma @ (model.constraint_costs[:, s, a] - model.thresholds)
    )


def relaxed_cost_table(model: Cmdp, gamma: np.ndarray) -> np.ndarray:
    """C(s, a, gamma) for every state-action pair, shape (S, A)."""
    gamma = _check_gamma(model, gamma)
    return model.cost + np.einsum(
        "k,ksa->sa", gamma, model.constraint_costs - model.thresholds[:, None, None]
    )


def _chain(model: Cmdp, policy: SoftmaxPolicy):
    probs = policy.prob_matrix()
    P = induced_chain(model, probs)
    mu = stationary_distribution(P)
    return probs, P, mu


def lagrangian_cost(
    model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """(J, G_k vector, L): long-run objective, constraint averages, Lagrangian."""
    gamma = _check_gamma(model, gamma)
    probs, _, mu = _chain(model, policy)
    weights = mu[:, None] * probs
    J = float((weights * model.cost).sum())
    G = np.einsum("sa,ksa->k", weights, model.constraint_costs)
    L = J + float(gamma @ (G - model.thresholds))
    return J, G, L


def differential_value(model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray) -> np.ndarray:
    """Differential (bias) value vector V with the normalization mu . V = 0.

    Solves the Poisson equation (I - P_pi) V = cbar_gamma - L 1 through the
    fundamental-matrix system (I - P + 1 mu^T) V = cbar_gamma - L 1, which is
    nonsingular for ergodic chains and lands exactly on the mu-centered
    solution.
    """
    gamma = _check_gamma(model, gamma)
    probs, P, mu = _chain(model, policy)
    C = relaxed_cost_table(model, gamma)
    cbar = (probs * C).sum(axis=1)
    L = float(mu @ cbar)
    n = model.n_states
    rhs = cbar - L
    V = np.linalg.solve(np.eye(n) - P + np.outer(np.ones(n), mu), rhs)
    residual = np.abs((np.eye(n) - P) @ V - rhs).max()
    if residual > POISSON_TOL:
        raise ValueError(f"Poisson solve residual {residual!r} exceeds {POISSON_TOL}")
    return V


def differential_q_advantage(
    model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Differential action values and advantages for the relaxed cost.

    Q(s,a) = C(s,a,gamma) - L + sum_s' p(s,a,s') V(s'), Adv = Q - V. The
    policy-weighted advantage is identically zero in every state.
    """
    gamma = _check_gamma(model, gamma)
    probs, P, mu = _chain(model, policy)
    C = relaxed_cost_table(model, gamma)
    cbar = (probs * C).sum(axis=1)
    L = float(mu @ cbar)
    V = differential_value(model, policy, gamma)
    Q = C - L + np.einsum("sat,t->sa", model.transition, V)
    return Q, Q - V[:, None]


@dataclass
class CriticFixedPoint:
    """TD(0) fixed-point data for frozen (theta, gamma).

    A = E[f_s (f_s' - f_s)^T], b = E[(C - L) f_s]; v_star solves A v + b = 0
    (the minimum-norm solution when A is singular but consistent, e.g. with
    one-hot features where constants are in the feature span). lambda_e is
    minus the largest eigenvalue of the symmetrized A; the negative-definite
    audit passes iff lambda_e > 0. unique is False when A had a null space.
    """

    A: np.ndarray
    b: np.ndarray
    v_star: np.ndarray
    lambda_e: float
    unique: bool


def critic_fixed_point(
    model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray, features: StateFeatures
) -> CriticFixedPoint:
    gamma = _check_gamma(model, gamma)
    probs, P, mu = _chain(model, policy)
    C = relaxed_cost_table(model, gamma)
    cbar = (probs * C).sum(axis=1)
    L = float(mu @ cbar)
    Phi = features.matrix
    D = mu[:, None]
    A = Phi.T @ (D * ((P - np.eye(model.n_states)) @ Phi))
    b = Phi.T @ (D[:, 0] * (cbar - L))
    lambda_e = -float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())

    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] <= 1e-14:
        raise FixedPointUndefinedError("fixed point undefined: A is the zero matrix")
    rank = int((sv > sv[0] * 1e-12).sum())
    if rank == features.dim:
        v_star = np.linalg.solve(A, -b)
        unique = True
    else:
        v_star, *_ = np.linalg.lstsq(A, -b, rcond=1e-12)
        unique = False
    if np.linalg.norm(A @ v_star + b) > FIXED_POINT_TOL:
        raise FixedPointUndefinedError("fixed point undefined: A v + b = 0 is inconsistent")
    return CriticFixedPoint(A=A, b=b, v_star=v_star, lambda_e=lambda_e, unique=unique)


def exact_policy_gradient(model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray) -> np.ndarray:
    """grad_theta L(theta, gamma) = sum_s mu(s) sum_a grad pi(a|s) Adv(s,a),
    with grad pi(a|s) = pi(a|s) psi(s,a)."""
    gamma = _check_gamma(model, gamma)
    probs, _, mu = _chain(model, policy)
    _, adv = differential_q_advantage(model, policy, gamma)
    psi = policy.score_table()
    return np.einsum("s,sa,sad,sa->d", mu, probs, psi, adv)


def m_bar(
    model: Cmdp,
    policy: SoftmaxPolicy,
    v: np.ndarray,
    gamma: np.ndarray,
    features: StateFeatures,
) -> np.ndarray:
    """Stationary mean of the critic-coupled actor update direction:
    E[(C(s,a,gamma) - L + f_s'^T v - f_s^T v) psi(s,a)].

    At v = v_star with an exact feature representation this coincides with the
    exact policy gradient.
    """
    gamma = _check_gamma(model, gamma)
    probs, _, mu = _chain(model, policy)
    C = relaxed_cost_table(model, gamma)
    cbar = (probs * C).sum(axis=1)
    L = float(mu @ cbar)
    fv = features.matrix @ np.asarray(v, dtype=float)
    td = C - L + np.einsum("sat,t->sa", model.transition, fv) - fv[:, None]
    psi = policy.score_table()
    return np.einsum("s,sa,sad,sa->d", mu, probs, psi, td)


def approximation_error(
    model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray, features: StateFeatures
) -> float:
    """Feature-representation error sqrt(E_mu (f_s^T v_star - V(s))^2).

    Both sides are mu-centered before differencing: the Poisson solution is
    only pinned up to a constant, and the TD fixed point anchors that constant
    differently, so the raw gap would measure the anchor rather than shape.
    """
    gamma = _check_gamma(model, gamma)
    _, _, mu = _chain(model, policy)
    V = differential_value(model, policy, gamma)
    fp = critic_fixed_point(model, policy, gamma, features)
    approx = features.matrix @ fp.v_star
    approx = approx - mu @ approx
    V = V - mu @ V
    return float(np.sqrt(mu @ (approx - V) ** 2))


@dataclass
class OracleSolution:
    """Every frozen-(theta, gamma) quantity in one bundle."""

    mu: np.ndarray
    J: float
    G_k: np.ndarray
    L: float
    V: np.ndarray
    Q: np.ndarray
    advantage: np.ndarray
    A_mat: np.ndarray
    b_vec: np.ndarray
    v_star: np.ndarray
    lambda_e: float
    grad: np.ndarray
    eps_app: float

    def to_document(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "J": self.J,
            "G_k": self.G_k.tolist(),
            "L": self.L,
            "V": self.V.tolist(),
            "Q": self.Q.tolist(),
            "advantage": self.advantage.tolist(),
            "A_mat": self.A_mat.tolist(),
            "b_vec": self.b_vec.tolist(),
            "v_star": self.v_star.tolist(),
            "lambda_e": self.lambda_e,
            "grad": self.grad.tolist(),
            "eps_app": self.eps_app,
        }


def solve(
    model: Cmdp, policy: SoftmaxPolicy, gamma: np.ndarray, features: StateFeatures
) -> OracleSolution:
    """Compute the full oracle bundle for a frozen (theta, gamma)."""
    gamma = _check_gamma(model, gamma)
    J, G, L = lagrangian_cost(model, policy, gamma)
    mu = stationary_distribution(induced_chain(model, policy.prob_matrix()))
    V = differential_value(model, policy, gamma)
    Q, adv = differential_q_advantage(model, policy, gamma)
    fp = critic_fixed_point(model, policy, gamma, features)
    grad = exact_policy_gradient(model, policy, gamma)
    eps = approximation_error(model, policy, gamma, features)
    return OracleSolution(
        mu=mu,
        J=J,
        G_k=G,
        L=L,
        V=V,
        Q=Q,
        advantage=adv,
        A_mat=fp.A,
        b_vec=fp.b,
        v_star=fp.v_star,
        lambda_e=fp.lambda_e,
        grad=grad,
        eps_app=eps,
    )
