"""Linear-softmax (Gibbs) policies over state-action features.

The policy is pi_theta(a|s) = exp(theta . x(s,a)) / sum_b exp(theta . x(s,b)),
with score (compatible feature) psi(s,a) = x(s,a) - E_{b~pi}[x(s,b)]. Scores
of this class are bounded by 2 * max ||x(s,a)|| and smooth in theta, which is
what the learner's Fisher recursion and step-size theory require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, _frozen, induced_chain, stationary_distribution


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Policy parameters: theta in R^d plus the feature table x[s, a] in R^d."""

    sa_features: np.ndarray  # (S, A, d)
    theta: np.ndarray  # (d,)

    def __post_init__(self):
        object.__setattr__(self, "sa_features", _frozen(self.sa_features))
        object.__setattr__(self, "theta", _frozen(np.atleast_1d(self.theta)))
        if self.sa_features.ndim != 3:
            raise ValueError("sa_features must be (S, A, d)")
        if self.theta.shape != (self.sa_features.shape[2],):
            raise ValueError("theta dimension does not match sa_features")
        if not np.isfinite(self.sa_features).all() or not np.isfinite(self.theta).all():
            raise ValueError("non-finite policy parameters")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def n_states(self) -> int:
        return self.sa_features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.sa_features.shape[1]

    def with_theta(self, theta: np.ndarray) -> "SoftmaxPolicy":
        return SoftmaxPolicy(sa_features=self.sa_features, theta=theta)

    def action_probabilities(self, s: int) -> np.ndarray:
        """Softmax over theta . x(s, .), overflow-safe via max subtraction."""
        scores = self.sa_features[s] @ self.theta
        scores = scores - scores.max()
        w = np.exp(scores)
        return w / w.sum()

    def prob_matrix(self) -> np.ndarray:
        """All action probabilities as an (S, A) table."""
        scores = self.sa_features @ self.theta
        scores = scores - scores.max(axis=1, keepdims=True)
        w = np.exp(scores)
        return w / w.sum(axis=1, keepdims=True)

    def score(self, s: int, a: int) -> np.ndarray:
        """Compatible feature psi(s,a) = grad_theta log pi(a|s)."""
        probs = self.action_probabilities(s)
        return self.sa_features[s, a] - probs @ self.sa_features[s]

    def score_table(self) -> np.ndarray:
        """psi for every (s, a), shape (S, A, d)."""
        probs = self.prob_matrix()
        mean = np.einsum("sa,sad->sd", probs, self.sa_features)
        return self.sa_features - mean[:, None, :]


def tabular_sa_features(n_states: int, n_actions: int) -> np.ndarray:
    """One-hot (s, a) indicator features, d = S * A."""
    d = n_states * n_actions
    x = np.zeros((n_states, n_actions, d))
    for s in range(n_states):
        for a in range(n_actions):
            x[s, a, s * n_actions + a] = 1.0
    return x


def reduced_tabular_sa_features(n_states: int, n_actions: int) -> np.ndarray:
    """One-hot (s, a) features with the last action pinned to zero, d = S*(A-1).

    Softmax probabilities are invariant to per-state score shifts, so this
    parameterizes exactly the same policy class as the full table while giving
    score vectors that span R^d, keeping the average Fisher matrix positive
    definite for interior policies.
    """
    if n_actions < 2:
        raise ValueError("need at least 2 actions to drop one")
    d = n_states * (n_actions - 1)
    x = np.zeros((n_states, n_actions, d))
    for s in range(n_states):
        for a in range(n_actions - 1):
            x[s, a, s * (n_actions - 1) + a] = 1.0
    return x


def compatible_feature_bound(sa_features: np.ndarray) -> float:
    """B = 2 * max ||x(s,a)||, a valid bound on every score norm."""
    return 2.0 * float(np.linalg.norm(np.asarray(sa_features), axis=2).max())


def exact_fisher(policy: SoftmaxPolicy, model: Cmdp) -> np.ndarray:
    """F(theta) = E_{s~mu, a~pi}[psi psi^T] under the policy's stationary law."""
    probs = policy.prob_matrix()
    mu = stationary_distribution(induced_chain(model, probs))
    psi = policy.score_table()
    return np.einsum("s,sa,sad,sae->de", mu, probs, psi, psi)


@dataclass
class SmoothnessReport:
    """Empirical policy-smoothness constants over a parameter grid.

    score_bound is max ||psi|| over grid x S x A. prob_lipschitz and
    score_lipschitz are max finite-difference ratios over distinct grid pairs;
    both are None when the grid has no usable pair. Report only: the theory
    asserts such constants exist but names no thresholds.
    """

    score_bound: float
    prob_lipschitz: float | None
    score_lipschitz: float | None


def smoothness_audit(sa_features: np.ndarray, theta_grid: list[np.ndarray]) -> SmoothnessReport:
    if len(theta_grid) == 0:
        raise ValueError("theta grid must be non-empty")
    policies = [SoftmaxPolicy(sa_features, th) for th in theta_grid]
    b_hat = max(float(np.linalg.norm(p.score_table(), axis=2).max()) for p in policies)
    prob_l = None
    score_l = None
    for i in range(len(policies)):
        for j in range(i + 1, len(policies)):
            dist = float(np.linalg.norm(policies[i].theta - policies[j].theta))
            if dist == 0.0:  # duplicated grid point
                continue
            dp = float(np.abs(policies[i].prob_matrix() - policies[j].prob_matrix()).max())
            ds = float(
                np.linalg.norm(policies[i].score_table() - policies[j].score_table(), axis=2).max()
            )
            prob_l = max(prob_l or 0.0, dp / dist)
            score_l = max(score_l or 0.0, ds / dist)
    return SmoothnessReport(score_bound=b_hat, prob_lipschitz=prob_l, score_lipschitz=score_l)
