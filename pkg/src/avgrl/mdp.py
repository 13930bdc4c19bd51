"""Finite average-reward MDPs, softmax-linear policies, and exact solvers.

All quantities here are population values computed by dense linear algebra on
the full transition model: stationary distributions, the long-run average
reward (gain), differential values, Q-values/advantages, the exact policy
gradient, and the Jacobian of the stationary distribution.  Sampled learners
are measured against these solvers, so correctness beats speed throughout.

Conventions:
  * transition[s, a, s1] = P(s1 | s, a), each (s, a) row a distribution,
  * reward[s, a] with |reward| <= reward_bound everywhere,
  * a policy chain has kernel[s, s1] = sum_a pi(a|s) P(s1|s,a) and
    expected_reward[s] = sum_a pi(a|s) R(s, a).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InvariantViolation, NotIrreducible, SingularSystem

_ROW_SUM_TOL = 1e-9
_SUPPORT_TOL = 1e-12


def _frozen_array(x, dtype=float) -> np.ndarray:
    out = np.array(x, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FiniteMdp:
    """A finite MDP with a known transition tensor and bounded rewards."""

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    reward_bound: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen_array(self.transition))
        object.__setattr__(self, "reward", _frozen_array(self.reward))
        P, R = self.transition, self.reward
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvariantViolation(f"transition tensor has shape {P.shape}, want (S, A, S)")
        if R.shape != P.shape[:2]:
            raise InvariantViolation(f"reward table has shape {R.shape}, want {P.shape[:2]}")
        if np.any(P < -_SUPPORT_TOL):
            s, a, s1 = np.unravel_index(int(np.argmin(P)), P.shape)
            raise InvariantViolation(f"negative transition probability at (s={s}, a={a}, s'={s1})")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if row_err.max() > _ROW_SUM_TOL:
            s, a = np.unravel_index(int(np.argmax(row_err)), row_err.shape)
            raise InvariantViolation(f"transition row (s={s}, a={a}) sums to {P[s, a].sum():.12g}")
        if self.reward_bound <= 0:
            raise InvariantViolation("reward_bound must be positive")
        if np.abs(R).max() > self.reward_bound + 1e-12:
            s, a = np.unravel_index(int(np.argmax(np.abs(R))), R.shape)
            raise InvariantViolation(
                f"|reward| at (s={s}, a={a}) is {abs(R[s, a]):.12g} > bound {self.reward_bound}"
            )

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class SoftmaxLinearPolicy:
    """Softmax-linear policy: pi(a|s) proportional to exp(theta . x(s, a)).

    The score function is grad log pi(a|s) = x(s,a) - sum_a' pi(a'|s) x(s,a'),
    so its norm never exceeds 2 * max ||x(s,a)|| (the `score_bound`).
    """

    theta: np.ndarray  # (d2,)
    action_features: np.ndarray  # (S, A, d2)

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_array(self.theta))
        object.__setattr__(self, "action_features", _frozen_array(self.action_features))
        if self.action_features.ndim != 3:
            raise InvariantViolation("action_features must have shape (S, A, d2)")
        if self.theta.shape != (self.action_features.shape[2],):
            raise InvariantViolation(
                f"theta has shape {self.theta.shape}, want ({self.action_features.shape[2]},)"
            )

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def feature_bound(self) -> float:
        return float(np.linalg.norm(self.action_features, axis=2).max())

    @property
    def score_bound(self) -> float:
        return 2.0 * self.feature_bound

    def with_theta(self, theta: np.ndarray) -> "SoftmaxLinearPolicy":
        return SoftmaxLinearPolicy(theta, self.action_features)

    def prob_table(self) -> np.ndarray:
        """Full pi(a|s) table, shape (S, A); rows sum to 1."""
        logits = self.action_features @ self.theta  # (S, A)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def score_table(self) -> np.ndarray:
        """grad log pi for every (s, a), shape (S, A, d2)."""
        p = self.prob_table()
        mean_feat = np.einsum("sa,sad->sd", p, self.action_features)
        return self.action_features - mean_feat[:, None, :]


@dataclass(frozen=True)
class PolicyChain:
    """Markov chain and expected one-step reward induced by a fixed policy."""

    kernel: np.ndarray  # (S, S)
    expected_reward: np.ndarray  # (S,)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _frozen_array(self.kernel))
        object.__setattr__(self, "expected_reward", _frozen_array(self.expected_reward))
        K = self.kernel
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise InvariantViolation(f"kernel has shape {K.shape}, want square")
        if self.expected_reward.shape != (K.shape[0],):
            raise InvariantViolation("expected_reward length must match kernel size")
        if np.any(K < -_SUPPORT_TOL):
            raise InvariantViolation("kernel has a negative entry")
        if np.abs(K.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
            raise InvariantViolation("kernel rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]


def induced_chain(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> PolicyChain:
    """Average the transition tensor and rewards under pi(.|s)."""
    p = policy.prob_table()
    kernel = np.einsum("sa,sat->st", p, mdp.transition)
    expected_reward = np.einsum("sa,sa->s", p, mdp.reward)
    return PolicyChain(kernel, expected_reward)


def is_irreducible(kernel: np.ndarray) -> bool:
    """True iff the support digraph is a single strongly connected component."""
    support = sp.csr_matrix(kernel > _SUPPORT_TOL)
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    return n_comp == 1


def chain_period(kernel: np.ndarray) -> int:
    """Period of an irreducible chain: gcd of (level[u] + 1 - level[v]) over edges.

    Levels come from a BFS over the support digraph; the standard identity for
    strongly connected graphs gives the gcd of all cycle lengths.
    """
    n = kernel.shape[0]
    level = np.full(n, -1, dtype=int)
    level[0] = 0
    frontier = [0]
    edges = []
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(kernel[u] > _SUPPORT_TOL)[0]:
                edges.append((u, int(v)))
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u, v in edges:
        g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) if g != 0 else 1


def stationary_distribution(chain: PolicyChain) -> np.ndarray:
    """Unique stationary distribution mu of an irreducible kernel.

    Solves the null-space system (P^T - I) mu = 0 augmented with the
    normalization row 1^T mu = 1, by least squares.  Raises NotIrreducible if
    the support graph has more than one closed communicating class, and
    SingularSystem if the solve does not reproduce stationarity to 1e-10.
    """
    K = chain.kernel
    if not is_irreducible(K):
        raise NotIrreducible("kernel support is not a single communicating class")
    n = K.shape[0]
    M = np.vstack([K.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    mu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    mu = np.clip(mu, 0.0, None)
    total = mu.sum()
    if not np.isfinite(total) or total <= 0:
        raise SingularSystem("stationary solve produced a degenerate vector")
    mu /= total
    if np.abs(mu @ K - mu).max() > 1e-10:
        raise SingularSystem(
            f"stationary residual {np.abs(mu @ K - mu).max():.3e} exceeds 1e-10"
        )
    return mu


def average_reward(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> float:
    """Long-run average reward (gain) L(theta) = mu . R_theta."""
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain)
    return float(mu @ chain.expected_reward)


def differential_value(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> np.ndarray:
    """Differential value V solving (I - P) V = R_theta - L e with mu . V = 0.

    Uses the fundamental-matrix trick: (I - P + e mu^T) is nonsingular for
    irreducible chains and its solution automatically satisfies mu . V = 0.
    Warns (without failing) when the chain is periodic, where P^m itself does
    not converge and only Cesaro averages do.
    """
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain)
    K = chain.kernel
    n = K.shape[0]
    if chain_period(K) > 1:
        warnings.warn("chain is periodic; differential value uses Cesaro-limit semantics")
    gain = float(mu @ chain.expected_reward)
    rhs = chain.expected_reward - gain
    try:
        V = np.linalg.solve(np.eye(n) - K + np.outer(np.ones(n), mu), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("differential value system is singular") from exc
    bellman = (np.eye(n) - K) @ V - rhs
    if np.abs(bellman).max() > 1e-9 or abs(mu @ V) > 1e-9:
        raise SingularSystem("differential value residual exceeds 1e-9")
    return V


def q_value(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> np.ndarray:
    """Q(s, a) = R(s, a) - L(theta) + sum_s1 P(s1|s,a) V(s1), shape (S, A)."""
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain)
    gain = float(mu @ chain.expected_reward)
    V = differential_value(mdp, policy)
    return mdp.reward - gain + mdp.transition @ V


def advantage_table(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> np.ndarray:
    """Advantage A(s, a) = Q(s, a) - V(s); satisfies sum_a pi(a|s) A(s, a) = 0."""
    V = differential_value(mdp, policy)
    return q_value(mdp, policy) - V[:, None]


def policy_gradient(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> np.ndarray:
    """Exact gradient of the gain: sum_{s,a} mu(s) pi(a|s) A(s,a) grad log pi(a|s)."""
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain)
    adv = advantage_table(mdp, policy)
    p = policy.prob_table()
    psi = policy.score_table()
    return np.einsum("s,sa,sa,sad->d", mu, p, adv, psi)


def grad_stationary(mdp: FiniteMdp, policy: SoftmaxLinearPolicy) -> np.ndarray:
    """Jacobian of the stationary distribution, shape (d2, S).

    Row j is mu^T (dP/dtheta_j) Z with Z = (I - P + P_inf)^{-1} and P_inf the
    rank-one matrix with every row equal to mu.  Each row sums to zero
    (probability is conserved along every parameter direction).
    """
    chain = induced_chain(mdp, policy)
    mu = stationary_distribution(chain)
    K = chain.kernel
    n = K.shape[0]
    p = policy.prob_table()
    psi = policy.score_table()
    try:
        Z = np.linalg.inv(np.eye(n) - K + np.outer(np.ones(n), mu))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("fundamental matrix is singular") from exc
    # dP_theta[j, s, s1] = sum_a pi(a|s) psi(s,a)[j] P(s1|s,a)
    dP = np.einsum("sa,saj,sat->jst", p, psi, mdp.transition)
    return np.einsum("s,jst,tu->ju", mu, dP, Z)
