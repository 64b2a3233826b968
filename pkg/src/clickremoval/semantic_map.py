"""Click-to-map extraction: Markov propagation over aggregated self-attention.

Turns user clicks plus the backbone's self-attention into two spatial maps:
a binary object map (what to suppress) and a soft background-similarity map
(how strongly to downweight regions that look like the clicked object).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import cv2
import numpy as np

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ClickSet:
    """Positive/negative clicks in normalized [0,1]^2 image coordinates (u, v)."""

    positives: tuple = ()
    negatives: tuple = ()

    def __post_init__(self):
        for u, v in list(self.positives) + list(self.negatives):
            if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                raise ValueError(f"click ({u}, {v}) outside [0,1]^2")

    def merged(self, other: "ClickSet") -> "ClickSet":
        return ClickSet(
            positives=tuple(self.positives) + tuple(other.positives),
            negatives=tuple(self.negatives) + tuple(other.negatives),
        )


@dataclass(frozen=True)
class PropagationConfig:
    tau: float = 0.05
    n_max: int = 20

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0,1], got {self.tau}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")


@dataclass
class TransitionMatrix:
    """Row-stochastic Markov kernel over the (h, w) spatial grid."""

    A: np.ndarray
    resolution: tuple  # (h, w) with h*w == A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def validate(self):
        h, w = self.resolution
        if self.A.shape != (h * w, h * w):
            raise ValueError(f"A shape {self.A.shape} != ({h * w}, {h * w})")
        if np.any(self.A < 0):
            raise ValueError("transition matrix has negative entries")
        rowsums = self.A.sum(axis=1)
        if np.max(np.abs(rowsums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition matrix rows do not sum to 1")


@dataclass
class SemanticDistanceMap:
    """Per-position minimum propagation step to exceed the relative threshold.

    Unreachable positions carry the sentinel value n_max + 1.
    """

    d: np.ndarray  # int array, length h*w
    resolution: tuple
    n_max: int

    @property
    def sentinel(self) -> int:
        return self.n_max + 1


@dataclass
class RemovalMaps:
    """Object map (binary) and background-similarity map (soft, in [0,1])."""

    m_ob: np.ndarray
    m_bg_tilde: np.ndarray
    resolution: tuple


def rasterize_click(u: float, v: float, h: int, w: int) -> int:
    """Map a normalized click to a flat grid index: row = floor(v*h), col = floor(u*w)."""
    row = min(int(v * h), h - 1)
    col = min(int(u * w), w - 1)
    return row * w + col


def aggregate_attention(attention_maps) -> TransitionMatrix:
    """Average per-head attention maps into one row-stochastic transition matrix.

    Zero rows after averaging (degenerate attention) are replaced with the
    uniform distribution and logged.
    """
    if not attention_maps:
        raise ValueError("no attention maps to aggregate")
    maps = [np.asarray(m, dtype=np.float64) for m in attention_maps]
    n = maps[0].shape[0]
    for m in maps:
        if m.ndim != 2 or m.shape != (n, n):
            raise ValueError(f"attention map shape {m.shape} != ({n}, {n})")
        if np.any(m < 0):
            raise ValueError("attention map has negative entries")
    mean = np.mean(maps, axis=0)
    rowsums = mean.sum(axis=1, keepdims=True)
    zero_rows = rowsums[:, 0] <= 0.0
    if np.any(zero_rows):
        log.warning("aggregate_attention: %d degenerate zero rows replaced with uniform",
                    int(zero_rows.sum()))
        mean[zero_rows] = 1.0 / n
        rowsums = mean.sum(axis=1, keepdims=True)
    A = mean / rowsums
    side = int(round(np.sqrt(n)))
    res = (side, side) if side * side == n else (1, n)
    return TransitionMatrix(A=A, resolution=res)


def propagate(A: TransitionMatrix, click_index: int, cfg: PropagationConfig) -> SemanticDistanceMap:
    """Markov propagation from a one-hot click distribution.

    d[i] is the smallest step n at which the propagated mass at i reaches
    tau times the current maximum over all positions; positions that never
    reach it get n_max + 1.
    """
    n = A.n
    if not (0 <= click_index < n):
        raise IndexError(f"click_index {click_index} out of range [0, {n})")
    sentinel = cfg.n_max + 1
    d = np.full(n, sentinel, dtype=np.int64)
    p = np.zeros(n, dtype=np.float64)
    p[click_index] = 1.0
    d[p >= cfg.tau * p.max()] = 0
    for step in range(1, cfg.n_max + 1):
        p = p @ A.A
        hit = (d == sentinel) & (p >= cfg.tau * p.max())
        d[hit] = step
    return SemanticDistanceMap(d=d, resolution=A.resolution, n_max=cfg.n_max)


def _grid_neighbors(idx: int, h: int, w: int):
    r, c = divmod(idx, w)
    if r > 0:
        yield idx - w
    if r < h - 1:
        yield idx + w
    if c > 0:
        yield idx - 1
    if c < w - 1:
        yield idx + 1


def flood_fill_object(dmap: SemanticDistanceMap, click_index: int,
                      level_tolerance: int = 1) -> np.ndarray:
    """Grow a 4-connected region from the click cell over increasing distance levels.

    At level L a frontier neighbor is absorbed when its distance <= L + tolerance.
    Growth stops at the elbow: the first level whose absorbed-cell count jumps
    above twice the previous level's, or at n_max // 2, whichever comes first.
    Returns a binary {0,1} map.
    """
    h, w = dmap.resolution
    d = dmap.d
    if d[click_index] != 0:
        raise ValueError("flood fill must start at a zero-distance cell")
    cutoff = max(dmap.n_max // 2, 0)

    region = np.zeros(d.shape[0], dtype=bool)
    region[click_index] = True

    def absorb(level):
        # closure over `region`: absorb until no frontier neighbor qualifies
        added = 0
        queue = deque(np.flatnonzero(region))
        while queue:
            i = queue.popleft()
            for j in _grid_neighbors(i, h, w):
                if not region[j] and d[j] <= level + level_tolerance:
                    region[j] = True
                    added += 1
                    queue.append(j)
        return added

    prev_growth = absorb(0) + 1  # level 0 seed region
    for level in range(1, cutoff + 1):
        snapshot = region.copy()
        growth = absorb(level)
        if growth > 2 * prev_growth:
            region = snapshot
            break
        if growth > 0:
            prev_growth = growth
    return region.astype(np.uint8)


def background_similarity(dmap: SemanticDistanceMap) -> np.ndarray:
    """Invert distances into similarity weights: 1 at the click, 0 when unreachable."""
    d = np.minimum(dmap.d, dmap.n_max).astype(np.float64)
    return 1.0 - d / dmap.n_max


def combine_clicks(A: TransitionMatrix, clicks: ClickSet,
                   cfg: PropagationConfig) -> RemovalMaps:
    """Fuse all clicks into the final removal maps.

    Positive clicks union their object regions and take the element-wise max
    of their similarity maps; negative clicks carve protection regions out of
    both.
    """
    if not clicks.positives:
        raise ValueError("at least one positive click is required")
    h, w = A.resolution

    pos_regions = []
    pos_sims = []
    for u, v in clicks.positives:
        idx = rasterize_click(u, v, h, w)
        dmap = propagate(A, idx, cfg)
        pos_regions.append(flood_fill_object(dmap, idx))
        pos_sims.append(background_similarity(dmap))

    m_ob = np.clip(np.sum(pos_regions, axis=0), 0, 1).astype(np.uint8)
    m_bg = np.max(pos_sims, axis=0)

    if clicks.negatives:
        protect = np.zeros(h * w, dtype=bool)
        for u, v in clicks.negatives:
            idx = rasterize_click(u, v, h, w)
            dmap = propagate(A, idx, cfg)
            protect |= flood_fill_object(dmap, idx).astype(bool)
        m_ob[protect] = 0
        m_bg[protect] = 0.0

    return RemovalMaps(m_ob=m_ob, m_bg_tilde=m_bg, resolution=(h, w))


def resize_maps(maps: RemovalMaps, target) -> RemovalMaps:
    """Resize to a new (h, w): bilinear for the soft map, nearest for the binary one."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError(f"invalid target resolution {target}")
    h, w = maps.resolution
    if (th, tw) == (h, w):
        return RemovalMaps(m_ob=maps.m_ob.copy(), m_bg_tilde=maps.m_bg_tilde.copy(),
                           resolution=(h, w))
    ob = maps.m_ob.reshape(h, w).astype(np.uint8)
    bg = maps.m_bg_tilde.reshape(h, w).astype(np.float64)
    ob_r = cv2.resize(ob, (tw, th), interpolation=cv2.INTER_NEAREST)
    bg_r = cv2.resize(bg, (tw, th), interpolation=cv2.INTER_LINEAR)
    return RemovalMaps(m_ob=ob_r.reshape(-1),
                       m_bg_tilde=np.clip(bg_r, 0.0, 1.0).reshape(-1),
                       resolution=(th, tw))
