"""Sampled two-timescale learners for average-reward control.

All three algorithms share the same per-step arithmetic and differ only in
their step-size schedules:

    L_{t+1}   = L_t + gamma_t (r_t - L_t)
    delta_t   = r_t - L_t + phi(s_{t+1}).v_t - phi(s_t).v_t     (pre-update L_t)
    v_{t+1}   = Proj_{||v|| <= U_v} (v_t + beta_t delta_t phi(s_t))
    theta_{t+1} = theta_t + alpha_t delta_t grad log pi_theta(a_t|s_t)

The critic-actor regime decays the critic slower than the actor
(nu < sigma); classic actor-critic flips the ordering; the single-timescale
variant runs both at the same rate.  The actor is unprojected by default; an
optional radius reproduces the projected variant.

Draws per step come from one counter-based generator in the fixed order
(action, next state, optional reward noise), so runs are bit-reproducible for
a given seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import AvgrlError, InvariantViolation, OracleFailure
from .features import FeatureMap
from .mdp import FiniteMdp, SoftmaxLinearPolicy


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step sizes.

    alpha_t = c_alpha / (1+t)^nu   (actor)
    beta_t  = c_beta  / (1+t)^sigma (critic)
    gamma_t = c_gamma / (1+t)^gamma_exp (average-reward tracker)

    c_gamma defaults to k_coupling * c_alpha and gamma_exp to nu, i.e. the
    tracker is coupled to the actor clock as gamma_t = K alpha_t.
    """

    c_alpha: float = 1.5
    c_beta: float = 1.5
    nu: float = 0.5
    sigma: float = 0.51
    k_coupling: float = 1.0
    c_gamma: float | None = None
    gamma_exp: float | None = None

    def __post_init__(self):
        if self.c_gamma is None:
            object.__setattr__(self, "c_gamma", self.k_coupling * self.c_alpha)
        if self.gamma_exp is None:
            object.__setattr__(self, "gamma_exp", self.nu)
        for name in ("c_alpha", "c_beta", "c_gamma"):
            if getattr(self, name) < 0:
                raise InvariantViolation(f"{name} must be nonnegative")
        for name in ("nu", "sigma", "gamma_exp"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise InvariantViolation(f"{name} = {val} outside [0, 1]")

    def alpha(self, t: int) -> float:
        return self.c_alpha / (1.0 + t) ** self.nu

    def beta(self, t: int) -> float:
        return self.c_beta / (1.0 + t) ** self.sigma

    def gamma(self, t: int) -> float:
        return self.c_gamma / (1.0 + t) ** self.gamma_exp


def ca_schedule(c: float = 1.5, nu: float = 0.5, sigma: float = 0.51,
                k_coupling: float = 1.0) -> StepSchedule:
    """Critic-actor default: actor on the faster clock (nu < sigma)."""
    return StepSchedule(c_alpha=c, c_beta=c, nu=nu, sigma=sigma, k_coupling=k_coupling)


def ac_schedule(c: float = 1.5) -> StepSchedule:
    """Actor-critic default: critic faster (exponent 0.4), actor slower (0.6).

    The average-reward tracker runs on the critic's (faster) clock.
    """
    return StepSchedule(c_alpha=c, c_beta=c, nu=0.6, sigma=0.4, c_gamma=c, gamma_exp=0.4)


def stac_schedule(c: float = 1.5) -> StepSchedule:
    """Single-timescale default: everything decays as (1+t)^-0.6."""
    return StepSchedule(c_alpha=c, c_beta=c, nu=0.6, sigma=0.6, c_gamma=c, gamma_exp=0.6)


@dataclass(frozen=True)
class ScheduleFlags:
    """Outcome of validate_schedule; ratio fields are None without a report."""

    finite_time_ok: bool
    asymptotic_ok: bool
    ratio_ok: bool | None
    ratio: float
    ratio_bound: float | None


def validate_schedule(sched: StepSchedule, report=None) -> ScheduleFlags:
    """Check the exponent and coefficient conditions for the CA guarantees.

    finite_time_ok:  0 < nu < sigma < 1, 2 sigma < 3 nu, 2 sigma - nu < 1.
    asymptotic_ok:   nu and sigma both in (1/2, 1] (square-summable but not
                     summable steps).
    ratio_ok:        c_alpha / c_gamma below the constant-dependent bound
                     1 / (2B(G + U_w) + U_w B); needs an AssumptionReport with
                     those constants and is None when no report is given.
    """
    nu, sigma = sched.nu, sched.sigma
    finite_time_ok = (
        0.0 < nu < sigma < 1.0 and 2.0 * sigma < 3.0 * nu and 2.0 * sigma - nu < 1.0
    )
    asymptotic_ok = 0.5 < nu <= 1.0 and 0.5 < sigma <= 1.0
    ratio = sched.c_alpha / sched.c_gamma if sched.c_gamma > 0 else np.inf
    ratio_ok = None
    ratio_bound = None
    if report is not None:
        ratio_bound = report.constants.get("ratio_bound")
        if ratio_bound is not None and np.isfinite(ratio_bound):
            ratio_ok = bool(ratio < ratio_bound)
    return ScheduleFlags(finite_time_ok, asymptotic_ok, ratio_ok, ratio, ratio_bound)


def project(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball ||v|| <= radius (identity inside)."""
    if radius <= 0:
        raise InvariantViolation("projection radius must be positive")
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v
    return v * (radius / norm)


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int


def td_error(tr: Transition, L: float, v: np.ndarray, features: FeatureMap) -> float:
    """One-step average-reward TD error r - L + phi(s').v - phi(s).v."""
    phi = features.table
    return float(tr.r - L + phi[tr.s_next] @ v - phi[tr.s] @ v)


@dataclass
class LearnerState:
    """Mutable iterate of Algorithm-style runs; rng is advanced in place."""

    t: int
    L: float
    v: np.ndarray
    theta: np.ndarray
    s: int
    rng: np.random.Generator


def init_state(
    mdp: FiniteMdp,
    policy: SoftmaxLinearPolicy,
    features: FeatureMap,
    seed: int = 0,
    l0: float = 0.0,
) -> LearnerState:
    """Fresh state: L = l0, v = 0, theta from the policy, s uniform, Philox rng."""
    rng = np.random.Generator(np.random.Philox(seed))
    s0 = int(rng.integers(mdp.n_states))
    return LearnerState(
        t=0,
        L=l0,
        v=np.zeros(features.dim),
        theta=np.array(policy.theta, dtype=float),
        s=s0,
        rng=rng,
    )


def _step_core(
    Pcum: np.ndarray,
    R: np.ndarray,
    x: np.ndarray,
    phi: np.ndarray,
    theta: np.ndarray,
    v: np.ndarray,
    L: float,
    s: int,
    rng: np.random.Generator,
    alpha: float,
    beta: float,
    gamma: float,
    uv_radius: float,
    reward_noise: float,
    reward_bound: float,
    actor_radius: float | None,
) -> tuple[int, float, float]:
    """One sampled update; mutates theta and v in place.

    Pcum holds cumulative transition rows (cumsum of P along the successor
    axis).  Returns (next state, updated average-reward iterate, td error).
    Draw order is (action, next state, optional reward noise); the td error
    uses the pre-update average-reward iterate.
    """
    logits = x[s] @ theta
    p = np.exp(logits - logits.max())
    p /= p.sum()
    n_actions = p.shape[0]
    a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    if a >= n_actions:  # cumulative sum may fall a few ulp short of 1
        a = n_actions - 1
    row = Pcum[s, a]
    n_states = row.shape[0]
    s1 = int(np.searchsorted(row, rng.random(), side="right"))
    if s1 >= n_states:
        s1 = n_states - 1
    r = R[s, a]
    if reward_noise > 0.0:
        r = r + reward_noise * (2.0 * rng.random() - 1.0)
        r = min(max(r, -reward_bound), reward_bound)

    L1 = L + gamma * (r - L)
    phi_s = phi[s]
    delta = r - L + phi[s1] @ v - phi_s @ v
    v += (beta * delta) * phi_s
    v_sq = v @ v
    if v_sq > uv_radius * uv_radius:
        v *= uv_radius / math.sqrt(v_sq)
    psi = x[s, a] - p @ x[s]
    theta += (alpha * delta) * psi
    if actor_radius is not None:
        t_sq = theta @ theta
        if t_sq > actor_radius * actor_radius:
            theta *= actor_radius / math.sqrt(t_sq)
    return s1, L1, delta


def _functional_step(
    state: LearnerState,
    mdp: FiniteMdp,
    policy: SoftmaxLinearPolicy,
    features: FeatureMap,
    sched: StepSchedule,
    uv_radius: float,
    reward_noise: float,
    actor_radius: float | None,
) -> LearnerState:
    theta = state.theta.copy()
    v = state.v.copy()
    t = state.t
    s1, L1, _ = _step_core(
        np.cumsum(mdp.transition, axis=2),
        mdp.reward,
        policy.action_features,
        features.table,
        theta,
        v,
        state.L,
        state.s,
        state.rng,
        sched.alpha(t),
        sched.beta(t),
        sched.gamma(t),
        uv_radius,
        reward_noise,
        mdp.reward_bound,
        actor_radius,
    )
    return LearnerState(t=t + 1, L=L1, v=v, theta=theta, s=s1, rng=state.rng)


def ca_step(
    state: LearnerState,
    mdp: FiniteMdp,
    policy: SoftmaxLinearPolicy,
    features: FeatureMap,
    sched: StepSchedule,
    uv_radius: float,
    reward_noise: float = 0.0,
    actor_radius: float | None = None,
) -> LearnerState:
    """One critic-actor step.  `policy` supplies the action-feature table only;
    the live actor parameters are state.theta.  Bit-deterministic given the
    RNG state."""
    return _functional_step(
        state, mdp, policy, features, sched, uv_radius, reward_noise, actor_radius
    )


def ac_step(
    state: LearnerState,
    mdp: FiniteMdp,
    policy: SoftmaxLinearPolicy,
    features: FeatureMap,
    sched: StepSchedule,
    uv_radius: float,
    reward_noise: float = 0.0,
    actor_radius: float | None = None,
) -> LearnerState:
    """One actor-critic step: same update equations, critic-faster schedule."""
    return _functional_step(
        state, mdp, policy, features, sched, uv_radius, reward_noise, actor_radius
    )


def stac_step(
    state: LearnerState,
    mdp: FiniteMdp,
    policy: SoftmaxLinearPolicy,
    features: FeatureMap,
    sched: StepSchedule,
    uv_radius: float,
    reward_noise: float = 0.0,
    actor_radius: float | None = None,
) -> LearnerState:
    """One single-timescale step: same update equations, equal exponents."""
    return _functional_step(
        state, mdp, policy, features, sched, uv_radius, reward_noise, actor_radius
    )


ALGO_SCHEDULES = {"ca": ca_schedule, "ac": ac_schedule, "stac": stac_schedule}


@dataclass
class RunConfig:
    """Resolved inputs for a learning run (objects, not file paths)."""

    mdp: FiniteMdp
    policy: SoftmaxLinearPolicy
    features: FeatureMap
    schedule: StepSchedule
    steps: int
    algo: str = "ca"
    seed: int = 0
    metrics_every: int = 1000
    uv_radius: float | None = None  # None: max(10 ||v*(theta_0)||, 1)
    actor_radius: float | None = None
    reward_noise: float = 0.0
    l0: float = 0.0
    tail_average_from: int | None = None  # accumulate mean of v_t from this step on

    def __post_init__(self):
        if self.algo not in ALGO_SCHEDULES:
            raise InvariantViolation(f"unknown algo {self.algo!r}")
        if self.steps < 0:
            raise InvariantViolation("steps must be nonnegative")
        if self.metrics_every <= 0:
            raise InvariantViolation("metrics_every must be positive")


@dataclass
class RunResult:
    rows: list
    final: LearnerState
    uv_radius: float
    v_tail_avg: np.ndarray | None = None


def resolve_uv_radius(config: RunConfig) -> float:
    """Default critic radius: 10x the fixed-point norm at theta_0, floor 1."""
    if config.uv_radius is not None:
        if config.uv_radius <= 0:
            raise InvariantViolation("uv_radius must be positive")
        return config.uv_radius
    from .oracles import critic_fixed_point

    v_star = critic_fixed_point(config.mdp, config.policy, config.features)
    return max(10.0 * float(np.linalg.norm(v_star)), 1.0)


def run(config: RunConfig) -> RunResult:
    """Execute a full run, emitting an exact-metrics row every metrics_every
    steps (and at the final step).  Any oracle failure while computing metrics
    aborts with the offending step index."""
    from .metrics import exact_metrics_row

    mdp, policy, features, sched = (
        config.mdp,
        config.policy,
        config.features,
        config.schedule,
    )
    uv_radius = resolve_uv_radius(config)
    state = init_state(mdp, policy, features, seed=config.seed, l0=config.l0)

    Pcum = np.cumsum(mdp.transition, axis=2)
    R = mdp.reward
    x, phi = policy.action_features, features.table
    theta, v = state.theta, state.v
    L, s = state.L, state.s
    rng = state.rng
    alpha_f, beta_f, gamma_f = sched.alpha, sched.beta, sched.gamma
    # With a frozen actor (c_alpha = 0, no radius) the policy table never
    # moves, so precompute its rows; the arithmetic and draw order match the
    # general path bit for bit.
    frozen_actor = sched.c_alpha == 0.0 and config.actor_radius is None
    if frozen_actor:
        probs = policy.with_theta(theta).prob_table()
        prob_cum = np.cumsum(probs, axis=1)
        n_actions = probs.shape[1]
        n_states = mdp.n_states
        uv_sq = uv_radius * uv_radius

    tail_from = config.tail_average_from
    tail_acc = np.zeros_like(v) if tail_from is not None else None
    tail_n = 0

    rows = []
    abs_delta_sum = 0.0
    window = 0
    start_ns = time.perf_counter_ns()
    for t in range(config.steps):
        if frozen_actor:
            a = int(np.searchsorted(prob_cum[s], rng.random(), side="right"))
            if a >= n_actions:
                a = n_actions - 1
            s1 = int(np.searchsorted(Pcum[s, a], rng.random(), side="right"))
            if s1 >= n_states:
                s1 = n_states - 1
            r = R[s, a]
            if config.reward_noise > 0.0:
                r = r + config.reward_noise * (2.0 * rng.random() - 1.0)
                r = min(max(r, -mdp.reward_bound), mdp.reward_bound)
            L1 = L + gamma_f(t) * (r - L)
            phi_s = phi[s]
            delta = r - L + phi[s1] @ v - phi_s @ v
            v += (beta_f(t) * delta) * phi_s
            v_sq = v @ v
            if v_sq > uv_sq:
                v *= uv_radius / math.sqrt(v_sq)
            s, L = s1, L1
        else:
            s, L, delta = _step_core(
                Pcum, R, x, phi, theta, v, L, s, rng,
                alpha_f(t), beta_f(t), gamma_f(t),
                uv_radius, config.reward_noise, mdp.reward_bound, config.actor_radius,
            )
        if tail_from is not None and t >= tail_from:
            tail_acc += v
            tail_n += 1
        abs_delta_sum += abs(delta)
        window += 1
        t1 = t + 1
        if t1 % config.metrics_every == 0 or t1 == config.steps:
            try:
                row = exact_metrics_row(
                    mdp, policy, features,
                    t=t1, theta=theta, v=v, L=L,
                    delta_abs_mean=abs_delta_sum / window,
                    wall_ns=time.perf_counter_ns() - start_ns,
                )
            except AvgrlError as exc:
                raise OracleFailure(f"exact metrics failed at step {t1}: {exc}") from exc
            rows.append(row)
            abs_delta_sum = 0.0
            window = 0

    state.t = config.steps
    state.L = L
    state.s = s
    v_tail = tail_acc / tail_n if tail_n else None
    return RunResult(rows=rows, final=state, uv_radius=uv_radius, v_tail_avg=v_tail)
