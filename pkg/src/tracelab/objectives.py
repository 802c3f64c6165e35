"""Scalar objectives and their gradients.

Population quantities (exact return, performance differences, windowed
surrogates and their variance) are computed by exhaustive enumeration only,
so they are exact up to float rounding.  Sampled groups feed the empirical
estimators and the practical clipped/masked objectives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ZeroSupportError
from .mdp import (
    DEFAULT_ENUMERATION_CAP,
    TokenMdp,
    Trajectory,
    reward,
    reward_vector,
    trajectory_chunks,
)
from .policies import TabularSoftmaxPolicy, policy_log_matrix
from .weights import (
    MASK_NONE,
    GroupRollout,
    MaskSpec,
    ratios,
    token_mask,
    traces,
    window_products,
)

OBJECTIVE_KINDS = ("nfpo", "mpg", "ppo")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which practical objective to evaluate, with all of its knobs.

    For ``nfpo``, ``eps_low``/``eps_high`` bound the clipped forward trace
    and ``beta`` clips each token ratio first.  For ``ppo`` they are the
    usual ratio clip band; ``beta`` and ``n_step`` are ignored.  ``mpg``
    uses only the mask.
    """

    kind: str
    n_step: int = 4
    beta: float = 3.0
    eps_low: float = 0.2
    eps_high: float = 0.4
    mask: MaskSpec = MASK_NONE

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"objective kind must be one of {OBJECTIVE_KINDS}")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not 0.0 < self.eps_low < 1.0:
            raise ValueError("eps_low must lie in (0, 1)")
        if not self.eps_high > 0.0:
            raise ValueError("eps_high must be positive")

    def params(self) -> dict:
        out = {
            "n_step": self.n_step,
            "beta": self.beta,
            "eps_low": self.eps_low,
            "eps_high": self.eps_high,
            "mask": {"kind": self.mask.kind},
        }
        for name in ("eps_low", "eps_high", "delta", "beta"):
            value = getattr(self.mask, name)
            if value is not None:
                out["mask"][name] = value
        return out


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PerSampleStat:
    """Single-trajectory windowed-surrogate statistic."""

    z: float
    trajectory: Trajectory


class VarianceReport(NamedTuple):
    per_sample: float
    per_group: float


# --- exact population quantities ---------------------------------------------


def exact_return(mdp: TokenMdp, policy, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Expected reward under the policy, summed over every trajectory."""
    log_p = policy_log_matrix(policy, mdp, cap)
    total = 0.0
    for tokens, state_ids in trajectory_chunks(mdp, cap):
        with np.errstate(invalid="ignore"):
            log_traj = log_p[state_ids, tokens].sum(axis=1)
        weights = np.exp(log_traj)
        total += float(weights @ reward_vector(mdp, tokens))
    return total


def performance_difference_direct(
    mdp: TokenMdp, pi, mu, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Expected-reward gap computed from the two returns separately."""
    return exact_return(mdp, pi, cap) - exact_return(mdp, mu, cap)


def _window_matrix(log_ratios: np.ndarray, n_step: int) -> np.ndarray:
    """Row-wise windowed forward products; robust to -inf log ratios."""
    m, t_len = log_ratios.shape
    idx = np.arange(t_len)
    end = np.minimum(idx + n_step, t_len)
    if np.isfinite(log_ratios).all():
        suffix = np.zeros((m, t_len + 1))
        suffix[:, :-1] = np.cumsum(log_ratios[:, ::-1], axis=1)[:, ::-1]
        return np.exp(suffix[:, idx + 1] - suffix[:, end])
    rho = np.exp(log_ratios)
    out = np.ones((m, t_len))
    for i in range(t_len):
        if end[i] > i + 1:
            out[:, i] = np.prod(rho[:, i + 1 : end[i]], axis=1)
    return out


def _population_moments(
    mdp: TokenMdp,
    pi,
    mu,
    n_step: int,
    cap: int,
    require_full_support: bool,
) -> tuple[float, float]:
    """First and second moments of the windowed statistic Z under mu."""
    if not 1 <= n_step <= mdp.horizon:
        raise ValueError(f"n_step must lie in [1, {mdp.horizon}], got {n_step}")
    log_pi = policy_log_matrix(pi, mdp, cap)
    log_mu = policy_log_matrix(mu, mdp, cap)
    if require_full_support and np.isneginf(log_mu).any():
        raise ZeroSupportError("rollout policy must have full support for exact identities")
    mean = 0.0
    second = 0.0
    for tokens, state_ids in trajectory_chunks(mdp, cap):
        token_log_mu = log_mu[state_ids, tokens]
        with np.errstate(invalid="ignore"):
            log_weight = token_log_mu.sum(axis=1)
        keep = ~np.isneginf(log_weight)
        if not keep.any():
            continue
        tokens = tokens[keep]
        weights = np.exp(log_weight[keep])
        log_r = log_pi[state_ids[keep], tokens] - token_log_mu[keep]
        gamma = _window_matrix(log_r, n_step)
        z = reward_vector(mdp, tokens) * ((np.exp(log_r) - 1.0) * gamma).sum(axis=1)
        mean += float(weights @ z)
        second += float(weights @ (z * z))
    return mean, second


def n_step_surrogate_population(
    mdp: TokenMdp, pi, mu, n_step: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Exact windowed surrogate; the local surrogate at n_step=1 and the
    full performance difference at n_step=horizon."""
    mean, _ = _population_moments(mdp, pi, mu, n_step, cap, require_full_support=True)
    return mean


def performance_difference_trace(
    mdp: TokenMdp, pi, mu, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Expected-reward gap through the forward-trace identity.

    Agreement with :func:`performance_difference_direct` is the exact
    telescoping identity, verified by the test suite on every enumerable
    configuration.
    """
    mean, _ = _population_moments(
        mdp, pi, mu, mdp.horizon, cap, require_full_support=True
    )
    return mean


def variance_of_statistic(
    mdp: TokenMdp,
    pi,
    mu,
    n_step: int,
    group_size: int = 1,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> VarianceReport:
    """Exact variance of the per-sample statistic, and its mean-of-G scaling."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    mean, second = _population_moments(
        mdp, pi, mu, n_step, cap, require_full_support=False
    )
    per_sample = max(second - mean * mean, 0.0)
    return VarianceReport(per_sample=per_sample, per_group=per_sample / group_size)


# --- empirical estimators ------------------------------------------------------


def per_sample_statistic(mdp: TokenMdp, y: Sequence[int], pi, mu, n_step: int) -> PerSampleStat:
    """Reward times the window-corrected sum of ratio deviations for one y."""
    y = mdp.check_trajectory(y)
    if not 1 <= n_step <= mdp.horizon:
        raise ValueError(f"n_step must lie in [1, {mdp.horizon}], got {n_step}")
    profile = ratios(pi, mu, y)
    gamma = window_products(profile.log_ratios, n_step)
    z = reward(mdp, y) * float(((profile.ratios - 1.0) * gamma).sum())
    return PerSampleStat(z=z, trajectory=y)


def n_step_surrogate_empirical(group: GroupRollout, pi, mu, n_step: int) -> float:
    """Group mean of the per-sample statistic; unbiased for the population value."""
    stats = [
        per_sample_statistic(group.mdp, y, pi, mu, n_step).z for y in group.trajectories
    ]
    return float(group.weights @ np.asarray(stats))


# --- practical objectives ------------------------------------------------------


def ppo_objective(group: GroupRollout, pi, mu, eps_low: float, eps_high: float) -> float:
    """Clipped-ratio surrogate with the usual pessimistic min."""
    if not 0.0 < eps_low < 1.0:
        raise ValueError("eps_low must lie in (0, 1)")
    if not eps_high > 0.0:
        raise ValueError("eps_high must be positive")
    total = 0.0
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        rho = ratios(pi, mu, y).ratios
        clipped = np.clip(rho, 1.0 - eps_low, 1.0 + eps_high)
        total += w * float(np.minimum(rho * adv, clipped * adv).sum())
    return float(total)


def mpg_objective(group: GroupRollout, pi, mu, mask: MaskSpec) -> float:
    """Masked token-level surrogate: masked tokens contribute exactly nothing."""
    total = 0.0
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        profile = ratios(pi, mu, y)
        keep = token_mask(mask, profile, float(adv), mu, pi, y)
        total += w * float((keep * profile.ratios * adv).sum())
    return float(total)


def nfpo_objective(
    group: GroupRollout,
    pi,
    mu,
    n_step: int,
    beta: float,
    eps_low: float,
    eps_high: float,
    mask: MaskSpec,
) -> float:
    """Masked surrogate reweighted by the clipped forward trace.

    The trace enters as a frozen coefficient: it shapes the value here and
    is held constant by :func:`nfpo_gradient` when differentiating.
    """
    total = 0.0
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        profile = ratios(pi, mu, y)
        trace = traces(profile, n_step, beta, eps_low, eps_high)
        keep = token_mask(mask, profile, float(adv), mu, pi, y)
        total += w * float((keep * adv * profile.ratios * trace.clipped).sum())
    return float(total)


# --- analytic gradients ---------------------------------------------------------


def _score_function_gradient(group: GroupRollout, pi: TabularSoftmaxPolicy, coeffs):
    """Gradient of sum_i sum_t c_it * rho_it w.r.t. tabular logits.

    Since d(c * rho)/d logit(s, b) = c * rho * (1{b = token} - pi(b | s)),
    callers pass ``coeffs`` holding the full products c_it * rho_it evaluated
    at the current policy; each per-state row then sums to zero by
    construction.
    """
    grads: dict = {}
    vocab_size = pi.mdp.vocab_size
    for y, coeff in zip(group.trajectories, coeffs):
        for t, tok in enumerate(y):
            c = float(coeff[t])
            if c == 0.0:
                continue
            prefix = y[:t]
            probs = pi.probs(prefix)
            row = grads.setdefault(pi.key(prefix), np.zeros(vocab_size))
            row -= c * probs
            row[tok] += c
    return grads


def _require_tabular(pi) -> TabularSoftmaxPolicy:
    if not isinstance(pi, TabularSoftmaxPolicy):
        raise TypeError("analytic gradients need a TabularSoftmaxPolicy target")
    return pi


def nfpo_gradient(
    group: GroupRollout,
    pi,
    mu,
    n_step: int,
    beta: float,
    eps_low: float,
    eps_high: float,
    mask: MaskSpec,
) -> dict:
    """Analytic gradient with masks and clipped traces frozen at the
    evaluation point; gradient flows only through the token ratio."""
    pi = _require_tabular(pi)
    coeffs = []
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        profile = ratios(pi, mu, y)
        trace = traces(profile, n_step, beta, eps_low, eps_high)
        keep = token_mask(mask, profile, float(adv), mu, pi, y)
        coeffs.append(w * adv * keep * trace.clipped * profile.ratios)
    return _score_function_gradient(group, pi, coeffs)


def mpg_gradient(group: GroupRollout, pi, mu, mask: MaskSpec) -> dict:
    pi = _require_tabular(pi)
    coeffs = []
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        profile = ratios(pi, mu, y)
        keep = token_mask(mask, profile, float(adv), mu, pi, y)
        coeffs.append(w * adv * keep * profile.ratios)
    return _score_function_gradient(group, pi, coeffs)


def ppo_gradient(group: GroupRollout, pi, mu, eps_low: float, eps_high: float) -> dict:
    """Gradient flows only through tokens where the min picks the raw-ratio
    branch; the clipped branch is a constant."""
    pi = _require_tabular(pi)
    coeffs = []
    for w, adv, y in zip(group.weights, group.advantages, group.trajectories):
        rho = ratios(pi, mu, y).ratios
        clipped = np.clip(rho, 1.0 - eps_low, 1.0 + eps_high)
        unclipped_active = rho * adv <= clipped * adv
        coeffs.append(w * adv * unclipped_active * rho)
    return _score_function_gradient(group, pi, coeffs)


def gradient_norm(gradient: dict) -> float:
    if not gradient:
        return 0.0
    return float(np.sqrt(sum(float(np.square(g).sum()) for g in gradient.values())))


# --- dispatch ---------------------------------------------------------------------


def objective_value(group: GroupRollout, pi, mu, spec: ObjectiveSpec) -> ObjectiveValue:
    if spec.kind == "nfpo":
        value = nfpo_objective(
            group, pi, mu, spec.n_step, spec.beta, spec.eps_low, spec.eps_high, spec.mask
        )
    elif spec.kind == "mpg":
        value = mpg_objective(group, pi, mu, spec.mask)
    else:
        value = ppo_objective(group, pi, mu, spec.eps_low, spec.eps_high)
    return ObjectiveValue(value=value, kind=spec.kind, params=spec.params())


def objective_gradient(group: GroupRollout, pi, mu, spec: ObjectiveSpec) -> dict:
    if spec.kind == "nfpo":
        return nfpo_gradient(
            group, pi, mu, spec.n_step, spec.beta, spec.eps_low, spec.eps_high, spec.mask
        )
    if spec.kind == "mpg":
        return mpg_gradient(group, pi, mu, spec.mask)
    return ppo_gradient(group, pi, mu, spec.eps_low, spec.eps_high)
