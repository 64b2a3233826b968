"""End-to-end removal: map extraction, staged dual-prediction denoising with
blended guidance, and image reconstruction."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import attention_control as ac
from . import semantic_map as sm
from .attention_control import GuidanceSchedule, StagePlan, build_stage_plan, modulation_for
from .backbone import LatentState, NoisePrediction, load_backbone
from .semantic_map import ClickSet, PropagationConfig, RemovalMaps

NO_OBJECT_FOUND = "NO_OBJECT_FOUND"


@dataclass
class RemovalRequest:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    clicks: ClickSet
    schedule: GuidanceSchedule = field(default_factory=GuidanceSchedule)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    preset: str = "toy"
    seed: int = 0


@dataclass
class RemovalResult:
    image: np.ndarray
    m_ob_image: np.ndarray  # object map upsampled to image resolution, {0,1}
    step_log: list  # one {"step", "stage", "alpha"} entry per denoising step
    duration: float
    flags: tuple = ()
    maps: RemovalMaps | None = None  # at attention resolution, for debugging

    @property
    def no_object_found(self) -> bool:
        return NO_OBJECT_FOUND in self.flags


def blend(eps: NoisePrediction, eps_mod: NoisePrediction, r: float) -> NoisePrediction:
    """Linear blend of original and modulated noise predictions."""
    if eps.values.shape != eps_mod.values.shape:
        raise ValueError(f"shape mismatch {eps.values.shape} vs {eps_mod.values.shape}")
    if not (0.0 <= r <= 1.0):
        raise ValueError(f"r must be in [0,1], got {r}")
    values = (1.0 - r) * eps.values + r * eps_mod.values
    return NoisePrediction(values=values, variant=eps_mod.variant)


def extract_maps(backbone, latent_state: LatentState, clicks: ClickSet,
                 cfg: PropagationConfig) -> RemovalMaps:
    """Capture attention once, aggregate it, and fuse the clicks into maps."""
    captured = backbone.capture_attention(latent_state)
    per_head = [head for maps in captured.values() for head in maps]
    A = sm.aggregate_attention(per_head)
    layer = backbone.descriptor.layer(backbone.descriptor.map_extraction_layers[0])
    A.resolution = tuple(layer.resolution)
    A.validate()
    return sm.combine_clicks(A, clicks, cfg)


def _per_layer_maps(backbone, maps: RemovalMaps) -> dict:
    resized = {}
    out = {}
    for layer in backbone.descriptor.layers:
        res = tuple(layer.resolution)
        if res not in resized:
            resized[res] = sm.resize_maps(maps, res)
        out[layer.name] = resized[res]
    return out


def remove_object(req: RemovalRequest, backbone=None, progress=None) -> RemovalResult:
    """Run the full removal pipeline; deterministic given the request seed."""
    if not req.clicks.positives:
        raise ValueError("at least one positive click is required")
    start = time.perf_counter()
    bk = backbone or load_backbone(req.preset)

    latent = bk.encode(req.image)
    steps = req.schedule.total_steps
    state, trajectory = bk.invert(latent, steps, seed=req.seed)

    mid = trajectory[len(trajectory) // 2]
    mid_state = LatentState(values=mid, t=steps // 2, step_index=0, seed=req.seed)
    maps = extract_maps(bk, mid_state, req.clicks, req.propagation)

    flags = ()
    modulate = maps.m_ob.any()
    if not modulate:
        flags = (NO_OBJECT_FOUND,)

    plan = build_stage_plan(req.schedule)
    layer_maps = _per_layer_maps(bk, maps) if modulate else {}

    step_log = []
    for i in range(steps):
        stage = plan.stages[i]
        alpha = float(plan.alphas[i])
        eps = bk.predict_noise(state, None)
        if modulate and stage in (ac.OBJECT_AND_BG, ac.OBJECT_ONLY):
            mod = {name: modulation_for(m, alpha, req.schedule.lam)
                   for name, m in layer_maps.items()}
            eps_mod = bk.predict_noise(state, mod)
            eps = blend(eps, eps_mod, req.schedule.r)
        state = bk.denoise_step(state, eps)
        step_log.append({"step": i, "stage": stage, "alpha": alpha})
        if progress is not None:
            progress(stage, i + 1, steps)

    image = _match_size(bk.decode(state.values), req.image.shape)
    h, w = req.image.shape[:2]
    mh, mw = maps.resolution
    m_ob_img = cv2.resize(maps.m_ob.reshape(mh, mw).astype(np.uint8), (w, h),
                          interpolation=cv2.INTER_NEAREST)
    duration = max(time.perf_counter() - start, 1e-9)
    return RemovalResult(image=image, m_ob_image=m_ob_img, step_log=step_log,
                         duration=duration, flags=flags, maps=maps)


def reconstruct(req: RemovalRequest, backbone=None) -> np.ndarray:
    """Invert then denoise with no modulation; the removal no-op baseline."""
    bk = backbone or load_backbone(req.preset)
    latent = bk.encode(req.image)
    state, _ = bk.invert(latent, req.schedule.total_steps, seed=req.seed)
    for _ in range(req.schedule.total_steps):
        eps = bk.predict_noise(state, None)
        state = bk.denoise_step(state, eps)
    return _match_size(bk.decode(state.values), req.image.shape)


def _match_size(image: np.ndarray, target_shape) -> np.ndarray:
    h, w = target_shape[:2]
    if image.shape[:2] == (h, w):
        return image
    return np.clip(cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)


def progressive_refine(prev: RemovalResult, added_clicks: ClickSet,
                       req: RemovalRequest, backbone=None,
                       progress=None) -> RemovalResult:
    """Re-run removal from the original image with the accumulated click set."""
    merged = req.clicks.merged(added_clicks)
    new_req = RemovalRequest(image=req.image, clicks=merged, schedule=req.schedule,
                             propagation=req.propagation, preset=req.preset,
                             seed=req.seed)
    return remove_object(new_req, backbone=backbone, progress=progress)
