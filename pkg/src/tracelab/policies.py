"""Policy families and per-state divergence measures.

Two families cover everything the lab needs: the analytic target-following
policy (probability ``alpha`` on the next unmatched target token, the rest
uniform) and a trainable tabular softmax keyed either by the full prefix or
by the matched-target length.
"""

from __future__ import annotations

from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import UnknownStateError, ZeroSupportError
from .mdp import (
    DEFAULT_ENUMERATION_CAP,
    TokenMdp,
    enumerate_prefixes,
    match_length,
)

StateKey = Hashable


class TargetFollowingPolicy:
    """Puts mass alpha on the next required target token, uniform otherwise.

    Once the full target has been matched the distribution is uniform over
    the vocabulary.  The distribution depends on the prefix only through the
    matched length k, so all |target|+1 rows are precomputed.
    """

    def __init__(self, mdp: TokenMdp, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.mdp = mdp
        self.alpha = float(alpha)
        v, n = mdp.vocab_size, len(mdp.target)
        table = np.full((n + 1, v), (1.0 - alpha) / (v - 1))
        for k in range(n):
            table[k, mdp.target[k]] = alpha
        table[n, :] = 1.0 / v
        table.flags.writeable = False
        self._table = table
        self._log_table = np.log(table)
        self._log_table.flags.writeable = False

    def probs(self, prefix: Sequence[int]) -> np.ndarray:
        return self._table[match_length(prefix, self.mdp.target)]

    def log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        return self._log_table[match_length(prefix, self.mdp.target)]

    def __repr__(self) -> str:
        return f"TargetFollowingPolicy(alpha={self.alpha})"


class TabularSoftmaxPolicy:
    """Trainable softmax policy with one logit row per state.

    ``state_key`` selects the state representation: ``"prefix"`` keeps the
    exact generated prefix (faithful but larger), ``"match_length"``
    collapses it to the matched-target length (a sufficient statistic for
    the target-following family, much cheaper to train).
    """

    STATE_KEYS = ("prefix", "match_length")

    def __init__(
        self,
        mdp: TokenMdp,
        logits: dict[StateKey, np.ndarray],
        state_key: str = "prefix",
    ):
        if state_key not in self.STATE_KEYS:
            raise ValueError(f"state_key must be one of {self.STATE_KEYS}")
        self.mdp = mdp
        self.state_key = state_key
        self.logits = {k: np.asarray(v, dtype=float).copy() for k, v in logits.items()}
        for k, row in self.logits.items():
            if row.shape != (mdp.vocab_size,):
                raise ValueError(f"logit row for state {k!r} has shape {row.shape}")

    @classmethod
    def _all_keys(cls, mdp: TokenMdp, state_key: str) -> Iterable[StateKey]:
        if state_key == "match_length":
            return range(len(mdp.target) + 1)
        return enumerate_prefixes(mdp)

    @classmethod
    def zeros(cls, mdp: TokenMdp, state_key: str = "prefix") -> "TabularSoftmaxPolicy":
        """Uniform policy: zero logits at every state."""
        logits = {k: np.zeros(mdp.vocab_size) for k in cls._all_keys(mdp, state_key)}
        return cls(mdp, logits, state_key)

    @classmethod
    def from_policy(
        cls, mdp: TokenMdp, policy, state_key: str = "prefix"
    ) -> "TabularSoftmaxPolicy":
        """Copy another policy's distributions into logits (log-probabilities)."""
        logits: dict[StateKey, np.ndarray] = {}
        if state_key == "match_length":
            n = len(mdp.target)
            # A representative prefix per matched length: the target's own head.
            for k in range(n + 1):
                logits[k] = np.log(policy.probs(mdp.target[:k]))
        else:
            for prefix in enumerate_prefixes(mdp):
                logits[prefix] = np.log(policy.probs(prefix))
        return cls(mdp, logits, state_key)

    def key(self, prefix: Sequence[int]) -> StateKey:
        if self.state_key == "match_length":
            return match_length(prefix, self.mdp.target)
        return tuple(prefix)

    def _row(self, prefix: Sequence[int]) -> np.ndarray:
        key = self.key(prefix)
        try:
            return self.logits[key]
        except KeyError:
            raise UnknownStateError(
                f"no logits for state {key!r}; policy/MDP mismatch?"
            ) from None

    def probs(self, prefix: Sequence[int]) -> np.ndarray:
        row = self._row(prefix)
        shifted = np.exp(row - row.max())
        return shifted / shifted.sum()

    def log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        row = self._row(prefix)
        shifted = row - row.max()
        return shifted - np.log(np.exp(shifted).sum())

    def apply_gradient(self, gradient: dict[StateKey, np.ndarray], learning_rate: float) -> None:
        """Ascent step: logits[state] += learning_rate * gradient[state]."""
        for key, g in gradient.items():
            if key not in self.logits:
                raise UnknownStateError(f"gradient for unknown state {key!r}")
            self.logits[key] += learning_rate * np.asarray(g, dtype=float)

    def copy(self) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(self.mdp, self.logits, self.state_key)

    def __repr__(self) -> str:
        return f"TabularSoftmaxPolicy(states={len(self.logits)}, state_key={self.state_key!r})"


def token_prob(policy, prefix: Sequence[int], token: int) -> float:
    """Probability of one token at one state."""
    return float(policy.probs(prefix)[token])


def trajectory_log_prob(policy, y: Sequence[int]) -> float:
    """log P(y) under the policy's autoregressive factorization."""
    y = tuple(y)
    total = 0.0
    for t, tok in enumerate(y):
        p = float(policy.probs(y[:t])[tok])
        if p == 0.0:
            return -np.inf
        total += np.log(p)
    return total


def state_tv(mu, pi, prefix: Sequence[int]) -> float:
    """Total variation distance between the two token distributions at a state."""
    return 0.5 * float(np.abs(np.asarray(mu.probs(prefix)) - np.asarray(pi.probs(prefix))).sum())


def state_kl(mu, pi, prefix: Sequence[int]) -> float:
    """KL(mu(.|s) || pi(.|s)); the rollout-to-target direction."""
    p = np.asarray(mu.probs(prefix), dtype=float)
    q = np.asarray(pi.probs(prefix), dtype=float)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def d_tv_max(mu, pi, mdp: TokenMdp, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Max state-wise total variation over all reachable prefixes."""
    return max(state_tv(mu, pi, prefix) for prefix in enumerate_prefixes(mdp, cap))


def ratio_deviation_bound(
    pi, mu, mdp: TokenMdp, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Exact sup over (state, token) of |pi/mu - 1| on the rollout support.

    Tokens with zero rollout probability never appear in sampled
    trajectories, so they are excluded from the bound.
    """
    worst = 0.0
    for prefix in enumerate_prefixes(mdp, cap):
        p_mu = np.asarray(mu.probs(prefix), dtype=float)
        p_pi = np.asarray(pi.probs(prefix), dtype=float)
        support = p_mu > 0
        if not support.any():
            continue
        dev = np.abs(p_pi[support] / p_mu[support] - 1.0).max()
        worst = max(worst, float(dev))
    return worst


def policy_log_matrix(
    policy, mdp: TokenMdp, cap: int = DEFAULT_ENUMERATION_CAP
) -> np.ndarray:
    """[n_prefixes, vocab] log-probabilities in enumeration-order rows.

    Row order matches the state ids produced by ``mdp.trajectory_chunks``.
    Zero probabilities map to -inf.
    """
    rows = np.empty((mdp.n_prefixes, mdp.vocab_size))
    for i, prefix in enumerate(enumerate_prefixes(mdp, cap)):
        rows[i] = np.asarray(policy.probs(prefix), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(rows)


def require_support(log_mu_tok: np.ndarray) -> None:
    """Raise when a sampled token had zero rollout probability."""
    if np.any(np.isneginf(log_mu_tok)):
        raise ZeroSupportError("rollout policy has zero probability on a sampled token")
