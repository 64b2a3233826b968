"""Self-attention redirection and its staged schedule across denoising steps.

Redirection multiplies pre-softmax logits by a background reweighting factor
and adds a large negative penalty on object keys; the schedule gates when and
how strongly that happens over the denoising trajectory.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .semantic_map import RemovalMaps

UNTOUCHED = "UNTOUCHED"
OBJECT_AND_BG = "OBJECT_AND_BG"
OBJECT_ONLY = "OBJECT_ONLY"
FREE = "FREE"

STAGE_NAMES = (UNTOUCHED, OBJECT_AND_BG, OBJECT_ONLY, FREE)

DEFAULT_UNTOUCHED_FRACTION = 0.2
DEFAULT_FREE_FRACTION = 0.2
DEFAULT_BG_STEPS = 8
DEFAULT_ALPHA_START = 0.2
DEFAULT_LAMBDA = 1e4


@dataclass(frozen=True)
class GuidanceSchedule:
    total_steps: int = 50
    untouched_fraction: float = DEFAULT_UNTOUCHED_FRACTION
    bg_steps: int = DEFAULT_BG_STEPS
    free_fraction: float = DEFAULT_FREE_FRACTION
    alpha_start: float = DEFAULT_ALPHA_START
    lam: float = DEFAULT_LAMBDA
    r: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.untouched_fraction < 1.0):
            raise ValueError(f"untouched_fraction must be in [0,1), got {self.untouched_fraction}")
        if not (0.0 <= self.free_fraction < 1.0):
            raise ValueError(f"free_fraction must be in [0,1), got {self.free_fraction}")
        if self.bg_steps < 0:
            raise ValueError(f"bg_steps must be >= 0, got {self.bg_steps}")
        if not (0 <= self.bg_steps <= 10 and (self.bg_steps >= 5 or self.bg_steps == 0)):
            warnings.warn(f"bg_steps={self.bg_steps} outside the usual 5-10 range")
        if not (0.0 <= self.alpha_start < 1.0):
            raise ValueError(f"alpha_start must be in [0,1), got {self.alpha_start}")
        if self.lam <= 0:
            raise ValueError(f"penalty magnitude must be > 0, got {self.lam}")
        if not (0.0 <= self.r <= 1.0):
            raise ValueError(f"r must be in [0,1], got {self.r}")


@dataclass
class StagePlan:
    """Per-step stage labels and alpha values for one denoising run."""

    stages: list  # length total_steps, entries in STAGE_NAMES
    alphas: np.ndarray  # length total_steps, alpha = 1 outside OBJECT_AND_BG

    def stage_lengths(self) -> dict:
        out = {name: 0 for name in STAGE_NAMES}
        for s in self.stages:
            out[s] += 1
        return out


@dataclass
class LogitModulation:
    g_bg: np.ndarray  # multiplicative key factors in (0, 1]
    p_ob: np.ndarray  # additive key penalties in {0, -lambda}
    resolution: tuple


def build_stage_plan(schedule: GuidanceSchedule) -> StagePlan:
    """Lay out the four stages over the step axis.

    Untouched head (ceil of the fraction), then the background-guidance
    window with alpha ramping linearly to 1, then object-only suppression,
    then a free tail (floor of the fraction).
    """
    t = schedule.total_steps
    if t < 4:
        raise ValueError(f"total_steps must be >= 4, got {t}")
    n_untouched = int(np.ceil(schedule.untouched_fraction * t))
    n_free = int(np.floor(schedule.free_fraction * t))
    n_bg = schedule.bg_steps
    n_object = t - n_untouched - n_bg - n_free
    if n_object < 0:
        raise ValueError(
            "stage lengths exceed total_steps: "
            f"untouched_fraction={schedule.untouched_fraction} ({n_untouched} steps), "
            f"bg_steps={n_bg}, free_fraction={schedule.free_fraction} ({n_free} steps), "
            f"total_steps={t}")

    stages = ([UNTOUCHED] * n_untouched + [OBJECT_AND_BG] * n_bg
              + [OBJECT_ONLY] * n_object + [FREE] * n_free)
    alphas = np.ones(t, dtype=np.float64)
    if n_bg == 1:
        alphas[n_untouched] = 1.0
    elif n_bg > 1:
        ramp = schedule.alpha_start + (1.0 - schedule.alpha_start) * np.arange(n_bg) / (n_bg - 1)
        alphas[n_untouched:n_untouched + n_bg] = ramp
    return StagePlan(stages=stages, alphas=alphas)


def modulation_for(maps: RemovalMaps, alpha: float, lam: float) -> LogitModulation:
    """Build the per-key modulation from the removal maps at a given alpha."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    g_bg = 1.0 - (1.0 - alpha) * maps.m_bg_tilde
    p_ob = -lam * maps.m_ob.astype(np.float64)
    return LogitModulation(g_bg=g_bg, p_ob=p_ob, resolution=maps.resolution)


def redirect_logits(s_self: np.ndarray, mod: LogitModulation) -> np.ndarray:
    """Apply key-axis modulation to pre-softmax logits: S * g_bg + p_ob.

    Softmax stays with the owning attention layer.
    """
    s = np.asarray(s_self)
    n = mod.g_bg.shape[0]
    if s.shape[-1] != n:
        raise ValueError(f"logits key axis {s.shape[-1]} != modulation size {n}")
    return s * mod.g_bg + mod.p_ob
