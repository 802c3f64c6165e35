"""Experiment drivers: the bias/variance sweep across window sizes,
full-batch tabular training, and learning-dynamics metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import b_n, hoeffding_penalty, truncation_bias_bound
from .errors import TrainingDivergedError
from .mdp import DEFAULT_ENUMERATION_CAP, TokenMdp
from .objectives import (
    ObjectiveSpec,
    exact_return,
    gradient_norm,
    n_step_surrogate_population,
    objective_gradient,
    objective_value,
    performance_difference_direct,
    variance_of_statistic,
)
from .policies import TabularSoftmaxPolicy, d_tv_max, ratio_deviation_bound
from .weights import ratios, sample_group, traces


@dataclass(frozen=True)
class SweepRow:
    """One window size of the bias/variance sweep."""

    n_step: int
    population_surrogate: float
    exact_improvement: float
    abs_bias: float
    per_sample_variance: float
    bound_truncation: float
    b_n: float
    hoeffding: float


def bias_variance_sweep(
    mdp: TokenMdp,
    pi,
    mu,
    n_list: Sequence[int],
    group_size: int,
    alpha_conf: float,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> list[SweepRow]:
    """Exact surrogate, bias, variance, and bound terms for each window size."""
    improvement = performance_difference_direct(mdp, pi, mu, cap)
    dtv = d_tv_max(mu, pi, mdp, cap)
    eps = max(ratio_deviation_bound(pi, mu, mdp, cap), 1e-12)
    xi = mdp.reward_bound
    rows = []
    for n_step in n_list:
        surrogate = n_step_surrogate_population(mdp, pi, mu, n_step, cap)
        variance = variance_of_statistic(mdp, pi, mu, n_step, cap=cap).per_sample
        b_val = b_n(xi, eps, mdp.horizon, n_step)
        rows.append(
            SweepRow(
                n_step=n_step,
                population_surrogate=surrogate,
                exact_improvement=improvement,
                abs_bias=abs(improvement - surrogate),
                per_sample_variance=variance,
                bound_truncation=truncation_bias_bound(xi, mdp.horizon, n_step, dtv),
                b_n=b_val,
                hoeffding=hoeffding_penalty(b_val, alpha_conf, group_size),
            )
        )
    return rows


@dataclass(frozen=True)
class TrainRecord:
    """Telemetry for one gradient-ascent step (post-update policy)."""

    step: int
    objective: float
    exact_return: float
    dtv_max: float
    grad_norm: float


def train(
    mdp: TokenMdp,
    pi: TabularSoftmaxPolicy,
    objective_spec: ObjectiveSpec,
    steps: int,
    learning_rate: float,
    group_size: int,
    seed: int,
    rollout_refresh: int = 1,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> list[TrainRecord]:
    """Full-batch gradient ascent on the chosen objective.

    Every ``rollout_refresh`` steps the rollout policy is re-snapshotted
    from the current target policy and a fresh group is sampled; between
    refreshes the same rollouts are re-weighted as the target moves, which
    is what makes the forward traces non-trivial.  The whole run is a pure
    function of its arguments: one seed, one record stream.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rollout_refresh < 1:
        raise ValueError("rollout_refresh must be >= 1")
    rng = np.random.default_rng(seed)
    records: list[TrainRecord] = []
    mu_snapshot = pi.copy()
    group = sample_group(mdp, mu_snapshot, group_size, rng)
    for step in range(steps):
        if step > 0 and step % rollout_refresh == 0:
            mu_snapshot = pi.copy()
            group = sample_group(mdp, mu_snapshot, group_size, rng)
        value = objective_value(group, pi, mu_snapshot, objective_spec).value
        if not math.isfinite(value):
            raise TrainingDivergedError(f"objective became {value} at step {step}")
        gradient = objective_gradient(group, pi, mu_snapshot, objective_spec)
        pi.apply_gradient(gradient, learning_rate)
        records.append(
            TrainRecord(
                step=step,
                objective=value,
                exact_return=exact_return(mdp, pi, cap),
                dtv_max=d_tv_max(mu_snapshot, pi, mdp, cap),
                grad_norm=gradient_norm(gradient),
            )
        )
    return records


@dataclass(frozen=True)
class DynamicsReport:
    """Pooled token-weighting statistics for a batch of rollouts.

    Correction strength is the mean absolute deviation of a weighting
    signal from 1; switch frequency is the fraction of adjacent token pairs
    whose signals sit on opposite sides of 1 (exactly 1 counts as neither
    side).
    """

    correction_strength_rho: float
    correction_strength_trace: float
    switch_freq_rho: float
    switch_freq_trace: float
    trace_variance: float

    def to_dict(self) -> dict:
        return {
            "correction_strength_rho": self.correction_strength_rho,
            "correction_strength_trace": self.correction_strength_trace,
            "switch_freq_rho": self.switch_freq_rho,
            "switch_freq_trace": self.switch_freq_trace,
            "trace_variance": self.trace_variance,
        }


def switch_count(signal: np.ndarray) -> int:
    """Adjacent pairs strictly straddling the neutral value 1."""
    deviations = np.asarray(signal, dtype=float) - 1.0
    return int(np.sum(deviations[:-1] * deviations[1:] < 0.0))


def switch_frequency(signal: Sequence[float]) -> float:
    signal = np.asarray(signal, dtype=float)
    if len(signal) < 2:
        raise ValueError("switch frequency needs at least 2 tokens")
    return switch_count(signal) / (len(signal) - 1)


def dynamics_report(
    trajectories: Sequence[Sequence[int]],
    pi,
    mu,
    n_step: int,
    beta: float,
    eps_low: float,
    eps_high: float,
) -> DynamicsReport:
    """Correction-strength / switch-frequency metrics over pooled rollouts."""
    if not trajectories:
        raise ValueError("dynamics_report needs at least one trajectory")
    abs_dev_rho: list[np.ndarray] = []
    abs_dev_trace: list[np.ndarray] = []
    trace_values: list[np.ndarray] = []
    switches_rho = switches_trace = pairs = 0
    for y in trajectories:
        if len(y) < 2:
            raise ValueError("each trajectory needs at least 2 tokens")
        profile = ratios(pi, mu, y)
        clipped = traces(profile, n_step, beta, eps_low, eps_high).clipped
        corrected = profile.ratios * clipped
        abs_dev_rho.append(np.abs(profile.ratios - 1.0))
        abs_dev_trace.append(np.abs(corrected - 1.0))
        trace_values.append(clipped)
        switches_rho += switch_count(profile.ratios)
        switches_trace += switch_count(corrected)
        pairs += len(y) - 1
    return DynamicsReport(
        correction_strength_rho=float(np.concatenate(abs_dev_rho).mean()),
        correction_strength_trace=float(np.concatenate(abs_dev_trace).mean()),
        switch_freq_rho=switches_rho / pairs,
        switch_freq_trace=switches_trace / pairs,
        trace_variance=float(np.concatenate(trace_values).var(ddof=1)),
    )


def alternating_profile(amplitude: float, length: int = 50) -> np.ndarray:
    """Ratio profile oscillating between 1 + a and 1 - a every token."""
    if not 0.0 < amplitude < 0.5:
        raise ValueError("amplitude must lie in (0, 0.5)")
    if length < 2:
        raise ValueError("length must be >= 2")
    profile = np.where(np.arange(length) % 2 == 0, 1.0 + amplitude, 1.0 - amplitude)
    return profile.astype(float)


def smoothing_demo(
    oscillation_profile: Sequence[float],
    n_step: int,
    beta: float = 3.0,
    eps_low: float = 0.2,
    eps_high: float = 0.4,
) -> tuple[float, float]:
    """Switch frequency of a ratio profile before and after trace correction."""
    rho = np.asarray(oscillation_profile, dtype=float)
    profile_obj = ratios_from_values(rho)
    clipped = traces(profile_obj, n_step, beta, eps_low, eps_high).clipped
    return switch_frequency(rho), switch_frequency(rho * clipped)


def ratios_from_values(values: Sequence[float]):
    """Wrap a raw positive ratio sequence as a profile (for constructed demos)."""
    from .weights import RatioProfile

    arr = np.asarray(values, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("ratios must be positive")
    return RatioProfile(ratios=arr, log_ratios=np.log(arr))
