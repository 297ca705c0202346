"""Identification of irreversible transitions and retrace-mask construction.

Adaptive mode detects sudden changes in a sliding-window average of Q-values
along each trajectory and gates those regions out of the retrace loss; fixed
mode removes a (possibly annealed) final proportion of each segment. All
functions here are pure numpy: Q-values are computed upstream with gradients
disabled, and masking never backpropagates into the critic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# denominator guard for relative differences of near-zero averages
REL_DIFF_EPS = 1e-6

MODES = ("adaptive", "fixed", "off", "both")


@dataclass
class TruncationConfig:
    eta: float = 0.10          # relative-change detection threshold
    window: int = 10           # sliding-average width S
    back_steps: int = 5        # entries removed before each detected change
    warmup_steps: int = 100_000  # adaptive masking disabled before this step
    mode: str = "adaptive"
    fixed_proportion: float = 0.0
    anneal_steps: int = 0      # linear decay horizon for fixed_proportion
    disjunctive: bool = False  # literal any-in-window reading of the predicate

    def __post_init__(self):
        if self.eta <= 0:
            raise ContractViolation("eta must be > 0")
        if self.window < 1:
            raise ContractViolation("window must be >= 1")
        if self.back_steps < 0:
            raise ContractViolation("back_steps must be >= 0")
        if not (0.0 <= self.fixed_proportion < 1.0):
            raise ContractViolation("fixed_proportion must lie in [0, 1)")
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}")


def sliding_q_average(q: np.ndarray, window: int) -> np.ndarray:
    """Sliding means over windows of `window` entries starting after each index.

    With 1-indexed entries, output i averages q[i+1 .. i+window]; the result
    has length len(q) - window.
    """
    q = np.asarray(q, dtype=np.float64)
    K = q.shape[0]
    if K <= window:
        raise ContractViolation(f"need more than window={window} values, got {K}")
    means = np.convolve(q, np.full(window, 1.0 / window), mode="valid")
    return means[1:]


def stepwise_relative_diff(q_avg: np.ndarray) -> np.ndarray:
    """|(avg[i+1] - avg[i]) / avg[i]| with the denominator floored at 1e-6."""
    q_avg = np.asarray(q_avg, dtype=np.float64)
    if q_avg.shape[0] < 2:
        return np.zeros(0)
    denom = np.maximum(np.abs(q_avg[:-1]), REL_DIFF_EPS)
    return np.abs(q_avg[1:] - q_avg[:-1]) / denom


def truncation_mask(delta: np.ndarray, eta: float, window: int, length: int,
                    disjunctive: bool = False) -> np.ndarray:
    """Binary retrace gate of `length` entries from the change indicators.

    Entry k (1-indexed) looks at delta indices j in [k-window, k] that exist.
    Default (conjunctive) keeps k only if every in-range delta is below eta;
    the disjunctive flag implements the literal any-below-eta reading. Empty
    windows keep the entry under both readings.
    """
    delta = np.asarray(delta, dtype=np.float64)
    small = delta < eta
    m = np.ones(length)
    n = delta.shape[0]
    for k in range(1, length + 1):
        lo = max(1, k - window)
        hi = min(k, n)
        if lo > hi:
            continue
        window_small = small[lo - 1:hi]
        keep = bool(np.any(window_small)) if disjunctive else bool(np.all(window_small))
        if not keep:
            m[k - 1] = 0.0
    return m


def _zero_before_changes(mask: np.ndarray, delta: np.ndarray, eta: float,
                         back_steps: int) -> None:
    """Zero `back_steps` entries preceding each flagged change index, in place."""
    if back_steps <= 0:
        return
    for j in np.nonzero(delta >= eta)[0] + 1:  # 1-indexed change positions
        lo = max(0, j - 1 - back_steps)
        mask[lo:j - 1] = 0.0


def adaptive_mask_for_batch(q_values: np.ndarray, config: TruncationConfig,
                            global_step: int) -> np.ndarray:
    """Per-trajectory masks from a [N, K] array of Q-values.

    Returns all-ones while global_step < warmup_steps or when the mode does
    not include adaptive masking.
    """
    q_values = np.asarray(q_values, dtype=np.float64)
    if q_values.ndim != 2:
        raise ContractViolation(f"expected [N, K] Q-values, got shape {q_values.shape}")
    N, K = q_values.shape
    masks = np.ones((N, K))
    if config.mode in ("off", "fixed") or global_step < config.warmup_steps:
        return masks
    for n in range(N):
        avg = sliding_q_average(q_values[n], config.window)
        delta = stepwise_relative_diff(avg)
        m = truncation_mask(delta, config.eta, config.window, K, config.disjunctive)
        _zero_before_changes(m, delta, config.eta, config.back_steps)
        masks[n] = m
    return masks


def fixed_truncation_mask(length: int, proportion: float, global_step: int,
                          anneal_steps: int = 0) -> np.ndarray:
    """All-ones except the last ceil(p*length) entries; p decays linearly to 0."""
    if not (0.0 <= proportion < 1.0):
        raise ContractViolation("proportion must lie in [0, 1)")
    if anneal_steps > 0:
        proportion = proportion * max(0.0, 1.0 - global_step / anneal_steps)
    mask = np.ones(length)
    n_zero = math.ceil(proportion * length)
    if n_zero > 0:
        mask[length - n_zero:] = 0.0
    return mask


def masks_for_batch(q_values: np.ndarray, config: TruncationConfig,
                    global_step: int) -> np.ndarray:
    """Combined mask per the configured mode; fixed and adaptive AND together."""
    N, K = np.asarray(q_values).shape
    masks = np.ones((N, K))
    if config.mode in ("adaptive", "both"):
        masks *= adaptive_mask_for_batch(q_values, config, global_step)
    if config.mode in ("fixed", "both"):
        masks *= fixed_truncation_mask(K, config.fixed_proportion, global_step,
                                       config.anneal_steps)[None, :]
    return masks
