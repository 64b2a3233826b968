"""Backbone adapters: latent I/O, deterministic inversion, and noise prediction
with an attention-interception hook.

The toy backbone is a fully deterministic, GPU-free stand-in: a 16x16 latent
grid, two fixed "decoder self-attention layers" with distance-based logits,
and a linear denoiser whose steps are exactly invertible. Every pipeline
stage has a closed-form oracle against it. Real Stable Diffusion presets are
loaded lazily via :mod:`clickremoval.sd`.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from importlib import resources

import cv2
import numpy as np

from .attention_control import LogitModulation, redirect_logits

ORIGINAL = "ORIGINAL"
MODULATED = "MODULATED"

TOY_STEP_SIZE = 0.15
TOY_QUAD = 8  # attention-isolated quadrant side on the 16x16 toy grid
TOY_BLOCK = (2, 6)  # per-quadrant "instance" block rows/cols (local coordinates)
TOY_BLOCK_BONUS = 3.0
TOY_CROSS_PENALTY = 1e4  # cross-quadrant logits; exp underflows to exactly 0
# (gamma inside the instance block, gamma elsewhere) per head
TOY_HEAD_GAMMAS = {"dec0": ((0.5, 0.2), (0.55, 0.22)),
                   "dec1": ((0.5, 0.18), (0.6, 0.25))}

PRESET_NAMES = ("toy", "sd15", "sd21", "sdxl10")


@dataclass(frozen=True)
class LayerInfo:
    name: str
    resolution: tuple
    heads: int


@dataclass(frozen=True)
class BackboneDescriptor:
    preset: str
    native_resolution: tuple
    latent_grid: tuple
    latent_channels: int
    layers: tuple  # of LayerInfo
    map_extraction_layers: tuple
    default_steps: int
    checkpoint: str | None

    def layer(self, name: str) -> LayerInfo:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(f"unknown attention layer {name!r}; "
                       f"available: {[l.name for l in self.layers]}")


def load_descriptor(preset: str) -> BackboneDescriptor:
    if preset not in PRESET_NAMES:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESET_NAMES}")
    raw = resources.files("clickremoval.presets").joinpath(f"{preset}.json").read_text()
    cfg = json.loads(raw)
    layers = tuple(LayerInfo(name=l["name"], resolution=tuple(l["resolution"]),
                             heads=l["heads"])
                   for l in cfg["decoder_self_attention_layers"])
    return BackboneDescriptor(
        preset=cfg["preset"],
        native_resolution=tuple(cfg["native_resolution"]),
        latent_grid=tuple(cfg["latent_grid"]),
        latent_channels=cfg["latent_channels"],
        layers=layers,
        map_extraction_layers=tuple(cfg["map_extraction_layers"]),
        default_steps=cfg["default_steps"],
        checkpoint=cfg["checkpoint"],
    )


@dataclass
class LatentState:
    values: np.ndarray  # (channels, h, w)
    t: int
    step_index: int
    seed: int = 0


@dataclass
class NoisePrediction:
    values: np.ndarray
    variant: str  # ORIGINAL or MODULATED


def _toy_head_logits(h: int, w: int, gamma_in: float, gamma_out: float) -> np.ndarray:
    """Distance-decay logits with quadrant isolation and per-quadrant blocks.

    Each 8x8 quadrant is an attention island (cross logits so negative that
    softmax underflows to exactly zero), so the toy scene factorizes into
    four independent regions. Inside every quadrant a 4x4 block forms a
    high-affinity community: the toy "object instance" that Markov
    propagation and flood fill can segment.
    """
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    quad = (coords[:, 0] // TOY_QUAD) * 2 + coords[:, 1] // TOY_QUAD
    same_quad = quad[:, None] == quad[None, :]
    lo, hi = TOY_BLOCK
    ly, lx = coords[:, 0] % TOY_QUAD, coords[:, 1] % TOY_QUAD
    in_block = (ly >= lo) & (ly < hi) & (lx >= lo) & (lx < hi)
    block_pair = np.outer(in_block, in_block) & same_quad
    s = np.where(block_pair, -gamma_in * d2 + TOY_BLOCK_BONUS, -gamma_out * d2)
    return np.where(same_quad, s, -TOY_CROSS_PENALTY)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ToyBackbone:
    """Deterministic linear backbone for GPU-free testing.

    The noise prediction is ``eps = x - P @ x`` per channel, where ``P`` is
    the mean attention over both layers (after any logit modulation). One
    denoising step is ``x <- x - h * eps``, a contraction toward the
    attention-smoothed field; inversion solves the same linear step backwards.
    """

    def __init__(self, resize_inputs: bool = True):
        self.descriptor = load_descriptor("toy")
        self.resize_inputs = resize_inputs
        h, w = self.descriptor.latent_grid
        self._logits = {
            layer.name: np.stack([_toy_head_logits(h, w, g_in, g_out)
                                  for g_in, g_out in TOY_HEAD_GAMMAS[layer.name]])
            for layer in self.descriptor.layers
        }
        self._lock = threading.Lock()

    # -- weights ----------------------------------------------------------
    def weights_checksum(self) -> str:
        md = hashlib.sha256()
        for name in sorted(self._logits):
            md.update(self._logits[name].tobytes())
        return md.hexdigest()

    # -- latent I/O -------------------------------------------------------
    def encode(self, image: np.ndarray) -> np.ndarray:
        """Image (H, W, 3) in [0,1] to latent (3, h, w); exact round-trip at native size."""
        h, w = self.descriptor.native_resolution
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        if img.shape[:2] != (h, w):
            if not self.resize_inputs:
                raise ValueError(f"image size {img.shape[:2]} != native {(h, w)}")
            img = cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA)
            if img.ndim == 2:
                img = np.stack([img] * 3, axis=-1)
        return np.transpose(img, (2, 0, 1)).copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.clip(np.transpose(latent, (1, 2, 0)), 0.0, 1.0)

    # -- attention --------------------------------------------------------
    def _layer_probs(self, modulation=None) -> dict:
        probs = {}
        for layer in self.descriptor.layers:
            heads = self._logits[layer.name]
            if modulation is not None and layer.name in modulation:
                mod = modulation[layer.name]
                if tuple(mod.resolution) != tuple(layer.resolution):
                    raise ValueError(
                        f"modulation resolution {mod.resolution} does not match "
                        f"layer {layer.name} at {layer.resolution}")
                heads = redirect_logits(heads, mod)
            probs[layer.name] = _softmax_rows(heads)
        return probs

    def _mean_kernel(self, modulation=None) -> np.ndarray:
        probs = self._layer_probs(modulation)
        return np.mean([p.mean(axis=0) for p in probs.values()], axis=0)

    def capture_attention(self, latent_state: LatentState, layer_selector=None) -> dict:
        """Post-softmax attention per selected layer, shape (heads, N, N).

        Toy attention is input-independent, so the latent only fixes the call
        signature shared with real backbones.
        """
        names = layer_selector or self.descriptor.map_extraction_layers
        out = {}
        for name in names:
            self.descriptor.layer(name)  # raises on unknown layer
            out[name] = _softmax_rows(self._logits[name]).copy()
        return out

    # -- denoising --------------------------------------------------------
    def _validate_modulation(self, modulation):
        if modulation is None:
            return
        layer_res = {tuple(l.resolution) for l in self.descriptor.layers}
        for name, mod in modulation.items():
            self.descriptor.layer(name)
            if tuple(mod.resolution) not in layer_res:
                raise ValueError(f"modulation resolution {mod.resolution} "
                                 f"matches no attention layer")

    def predict_noise(self, latent_state: LatentState, modulation=None) -> NoisePrediction:
        self._validate_modulation(modulation)
        h, w = self.descriptor.latent_grid
        x = latent_state.values.reshape(self.descriptor.latent_channels, h * w)
        p = self._mean_kernel(modulation)
        eps = x - x @ p.T
        variant = ORIGINAL if modulation is None else MODULATED
        return NoisePrediction(values=eps.reshape(latent_state.values.shape), variant=variant)

    def denoise_step(self, latent_state: LatentState, eps: NoisePrediction) -> LatentState:
        values = latent_state.values - TOY_STEP_SIZE * eps.values
        return LatentState(values=values, t=latent_state.t - 1,
                           step_index=latent_state.step_index + 1,
                           seed=latent_state.seed)

    def invert(self, latent: np.ndarray, steps: int, seed: int = 0):
        """Run the exact inverse of ``steps`` unmodulated denoise steps.

        Returns the starting state plus the inversion trajectory from clean
        to noisy (length steps + 1, trajectory[0] is the input latent).
        """
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        h, w = self.descriptor.latent_grid
        n = h * w
        p = self._mean_kernel(None)
        m = (1.0 - TOY_STEP_SIZE) * np.eye(n) + TOY_STEP_SIZE * p
        x = latent.reshape(self.descriptor.latent_channels, n)
        trajectory = [latent.copy()]
        for _ in range(steps):
            x = np.linalg.solve(m, x.T).T
            trajectory.append(x.reshape(latent.shape).copy())
        state = LatentState(values=trajectory[-1], t=steps, step_index=0, seed=seed)
        return state, trajectory


def load_backbone(preset: str, **kwargs):
    if preset == "toy":
        return ToyBackbone(**kwargs)
    from . import sd
    return sd.StableDiffusionBackbone(load_descriptor(preset), **kwargs)
