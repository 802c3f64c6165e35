"""Per-trajectory weighting machinery: likelihood ratios, forward traces,
token masks, and group-centered advantages.

All products are accumulated in log space and exponentiated once, so the
window/residual decomposition stays numerically exact at any horizon.
Index convention: position ``i`` (0-based) holds the quantity attached to
token ``t = i + 1``, e.g. ``full[i]`` is the product of all ratios strictly
after token ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ZeroSupportError
from .mdp import (
    DEFAULT_ENUMERATION_CAP,
    TokenMdp,
    Trajectory,
    reward,
    sample_trajectory,
    trajectory_chunks,
    reward_vector,
)
from .policies import policy_log_matrix, state_kl, state_tv


@dataclass(frozen=True)
class RatioProfile:
    """Per-token likelihood ratios pi/mu along one trajectory."""

    ratios: np.ndarray
    log_ratios: np.ndarray

    def __len__(self) -> int:
        return len(self.ratios)


def ratios(pi, mu, y: Sequence[int]) -> RatioProfile:
    """Token-level likelihood ratios of pi relative to mu along y."""
    y = tuple(y)
    log_r = np.zeros(len(y))
    if pi is not mu:
        for t, tok in enumerate(y):
            prefix = y[:t]
            p_mu = float(mu.probs(prefix)[tok])
            if p_mu == 0.0:
                raise ZeroSupportError(
                    f"rollout policy gives zero probability to token {tok} at step {t + 1}"
                )
            log_r[t] = np.log(float(pi.probs(prefix)[tok])) - np.log(p_mu)
    return RatioProfile(ratios=np.exp(log_r), log_ratios=log_r)


def window_products(log_ratios: np.ndarray, n_step: int) -> np.ndarray:
    """For each position i: product of the next min(n_step-1, T-1-i) ratios.

    This is the truncated forward correction attached to token i+1; an
    empty window gives 1.
    """
    t_len = len(log_ratios)
    suffix = _suffix_sums(log_ratios)
    idx = np.arange(t_len)
    end = np.minimum(idx + n_step, t_len)
    return np.exp(suffix[idx + 1] - suffix[end])


def _suffix_sums(values: np.ndarray) -> np.ndarray:
    """suffix[i] = sum(values[i:]); suffix[len] = 0."""
    out = np.zeros(len(values) + 1)
    out[:-1] = np.cumsum(values[::-1])[::-1]
    return out


@dataclass(frozen=True)
class TraceSet:
    """Forward-trace family for one ratio profile.

    full[i]          product of all ratios after token i+1 (1 at the end)
    n_step[i]        product of the next window of ratios only
    residual[i]      product of the ratios the window left out
    clipped_ratio[i] token ratio clipped to [1/beta, beta]
    clipped[i]       window product of clipped ratios, then clipped to
                     [1 - eps_low, 1 + eps_high]
    """

    full: np.ndarray
    n_step: np.ndarray
    residual: np.ndarray
    clipped_ratio: np.ndarray
    clipped: np.ndarray
    horizon_n: int
    beta: float
    eps_low: float
    eps_high: float


def traces(
    profile: RatioProfile,
    n_step: int,
    beta: float,
    eps_low: float,
    eps_high: float,
) -> TraceSet:
    """All trace variants for one trajectory's ratio profile."""
    t_len = len(profile)
    if not 1 <= n_step <= t_len:
        raise ValueError(f"n_step must lie in [1, {t_len}], got {n_step}")
    if not beta > 1:
        raise ValueError(f"beta must exceed 1, got {beta}")
    if not 0.0 < eps_low < 1.0:
        raise ValueError(f"eps_low must lie in (0, 1), got {eps_low}")
    if not eps_high > 0.0:
        raise ValueError(f"eps_high must be positive, got {eps_high}")

    idx = np.arange(t_len)
    end = np.minimum(idx + n_step, t_len)

    suffix = _suffix_sums(profile.log_ratios)
    full = np.exp(suffix[idx + 1])
    n_step_arr = np.exp(suffix[idx + 1] - suffix[end])
    residual = np.exp(suffix[end])

    clipped_ratio = np.clip(profile.ratios, 1.0 / beta, beta)
    clipped_suffix = _suffix_sums(np.log(clipped_ratio))
    clipped = np.clip(
        np.exp(clipped_suffix[idx + 1] - clipped_suffix[end]),
        1.0 - eps_low,
        1.0 + eps_high,
    )
    return TraceSet(
        full=full,
        n_step=n_step_arr,
        residual=residual,
        clipped_ratio=clipped_ratio,
        clipped=clipped,
        horizon_n=n_step,
        beta=beta,
        eps_low=eps_low,
        eps_high=eps_high,
    )


# --- token masks -------------------------------------------------------------

MASK_KINDS = ("grpo_ratio", "tv", "kl", "icepop", "none")


@dataclass(frozen=True)
class MaskSpec:
    """Which tokens keep their gradient signal.

    grpo_ratio  asymmetric ratio band (1 - eps_low, 1 + eps_high), advantage
                escape hatch for updates moving back toward the rollout policy
    tv          state total variation <= delta, same escape hatch
    kl          state KL(mu || pi) <= delta, same escape hatch
    icepop      plain ratio band [1/beta, beta], no advantage condition
    none        keep everything
    """

    kind: str
    eps_low: Optional[float] = None
    eps_high: Optional[float] = None
    delta: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"mask kind must be one of {MASK_KINDS}, got {self.kind!r}")
        if self.kind == "grpo_ratio":
            if self.eps_low is None or not 0.0 < self.eps_low < 1.0:
                raise ValueError("grpo_ratio mask needs eps_low in (0, 1)")
            if self.eps_high is None or not self.eps_high > 0.0:
                raise ValueError("grpo_ratio mask needs eps_high > 0")
        elif self.kind in ("tv", "kl"):
            if self.delta is None or not self.delta > 0.0:
                raise ValueError(f"{self.kind} mask needs delta > 0")
        elif self.kind == "icepop":
            if self.beta is None or not self.beta > 1.0:
                raise ValueError("icepop mask needs beta > 1")


MASK_NONE = MaskSpec("none")


def token_mask(
    mask: MaskSpec,
    profile: RatioProfile,
    advantage: float,
    mu,
    pi,
    y: Sequence[int],
) -> np.ndarray:
    """Binary keep/drop vector for one trajectory's tokens."""
    y = tuple(y)
    rho = profile.ratios
    toward_rollout = advantage * (rho - 1.0) <= 0.0
    if mask.kind == "none":
        keep = np.ones(len(y), dtype=bool)
    elif mask.kind == "grpo_ratio":
        inside = (rho > 1.0 - mask.eps_low) & (rho < 1.0 + mask.eps_high)
        keep = inside | toward_rollout
    elif mask.kind == "icepop":
        keep = (rho >= 1.0 / mask.beta) & (rho <= mask.beta)
    else:
        measure = state_tv if mask.kind == "tv" else state_kl
        within = np.array(
            [measure(mu, pi, y[:t]) <= mask.delta for t in range(len(y))], dtype=bool
        )
        keep = within | toward_rollout
    return keep.astype(np.int64)


# --- group rollouts ----------------------------------------------------------


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Center each reward on its group mean."""
    r = np.asarray(rewards, dtype=float)
    if len(r) < 2:
        raise ValueError(f"group advantages need at least 2 rewards, got {len(r)}")
    return r - r.mean()


@dataclass(frozen=True)
class GroupRollout:
    """A batch of trajectories with rewards and group-centered advantages.

    ``weights`` are the aggregation weights of the batch mean: uniform 1/G
    for sampled groups, exact trajectory probabilities for the population
    pseudo-group used in enumeration checks.
    """

    mdp: TokenMdp
    trajectories: tuple[Trajectory, ...]
    rewards: np.ndarray
    advantages: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        g = len(self.trajectories)
        if g < 1:
            raise ValueError("a rollout group needs at least one trajectory")
        if not (len(self.rewards) == len(self.advantages) == len(self.weights) == g):
            raise ValueError("rollout group field lengths disagree")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("rollout group weights must sum to 1")

    @property
    def group_size(self) -> int:
        return len(self.trajectories)


def sample_group(
    mdp: TokenMdp, mu, group_size: int, rng: np.random.Generator
) -> GroupRollout:
    """Sample G trajectories from the rollout policy and center their rewards."""
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    trajectories = tuple(sample_trajectory(mdp, mu, rng) for _ in range(group_size))
    rewards = np.array([reward(mdp, y) for y in trajectories])
    return GroupRollout(
        mdp=mdp,
        trajectories=trajectories,
        rewards=rewards,
        advantages=rewards - rewards.mean(),
        weights=np.full(group_size, 1.0 / group_size),
    )


def population_group(
    mdp: TokenMdp, mu, cap: int = DEFAULT_ENUMERATION_CAP
) -> GroupRollout:
    """Every trajectory, weighted by its exact rollout probability.

    Batch means over this pseudo-group are population expectations under mu;
    zero-probability trajectories are dropped so ratios stay well-defined.
    """
    log_mu = policy_log_matrix(mu, mdp, cap)
    blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for tokens, state_ids in trajectory_chunks(mdp, cap):
        log_p = log_mu[state_ids, tokens].sum(axis=1)
        keep = ~np.isneginf(log_p)
        blocks.append((tokens[keep], np.exp(log_p[keep]), reward_vector(mdp, tokens[keep])))
    tokens = np.concatenate([b[0] for b in blocks])
    weights = np.concatenate([b[1] for b in blocks])
    rewards = np.concatenate([b[2] for b in blocks])
    mean_reward = float(weights @ rewards)
    return GroupRollout(
        mdp=mdp,
        trajectories=tuple(tuple(int(v) for v in row) for row in tokens),
        rewards=rewards,
        advantages=rewards - mean_reward,
        weights=weights,
    )
