"""Stable Diffusion adapter: DDIM inversion and self-attention interception.

Requires the optional ``sd`` extra (torch + diffusers) and downloaded
checkpoints; everything here is lazy so the rest of the package stays
importable on CPU-only machines without weights.
"""

from __future__ import annotations

import hashlib
import os
import threading

import numpy as np

from .attention_control import LogitModulation
from .backbone import (MODULATED, ORIGINAL, BackboneDescriptor, LatentState,
                       NoisePrediction)

CACHE_DIR_ENV = "CLICKREMOVAL_CACHE_DIR"


def _require_torch():
    try:
        import torch  # noqa: F401
        from diffusers import AutoencoderKL, DDIMScheduler, UNet2DConditionModel  # noqa: F401
    except ImportError as exc:
        raise RuntimeError(
            "Stable Diffusion presets need the 'sd' extra: "
            "pip install clickremoval[sd]") from exc


class _RedirectingProcessor:
    """Attention processor that edits pre-softmax logits for one layer."""

    def __init__(self, owner, layer_name: str):
        self.owner = owner
        self.layer_name = layer_name

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, **kwargs):
        import torch

        residual = hidden_states
        is_self = encoder_hidden_states is None
        context = hidden_states if is_self else encoder_hidden_states

        query = attn.to_q(hidden_states)
        key = attn.to_k(context)
        value = attn.to_v(context)
        query = attn.head_to_batch_dim(query)
        key = attn.head_to_batch_dim(key)
        value = attn.head_to_batch_dim(value)

        scores = torch.baddbmm(
            torch.zeros(query.shape[0], query.shape[1], key.shape[1],
                        dtype=query.dtype, device=query.device),
            query, key.transpose(-1, -2), beta=0, alpha=attn.scale)

        if is_self:
            mod = self.owner._active_modulation.get(self.layer_name)
            if mod is not None:
                g = torch.as_tensor(mod.g_bg, dtype=scores.dtype, device=scores.device)
                p = torch.as_tensor(mod.p_ob, dtype=scores.dtype, device=scores.device)
                scores = scores * g + p
            probs = scores.softmax(dim=-1)
            if self.owner._capture_into is not None:
                self.owner._capture_into[self.layer_name] = (
                    probs.detach().float().cpu().numpy())
        else:
            probs = scores.softmax(dim=-1)

        hidden_states = torch.bmm(probs, value)
        hidden_states = attn.batch_to_head_dim(hidden_states)
        hidden_states = attn.to_out[0](hidden_states)
        hidden_states = attn.to_out[1](hidden_states)
        if attn.residual_connection:
            hidden_states = hidden_states + residual
        return hidden_states


class StableDiffusionBackbone:
    """Adapter over a frozen SD UNet + VAE with deterministic DDIM stepping.

    Conditioning is the empty prompt only; no classifier-free guidance. All
    decoder self-attention layers named in the preset descriptor are
    intercepted.
    """

    def __init__(self, descriptor: BackboneDescriptor, device: str = None,
                 dtype=None):
        _require_torch()
        import torch
        from diffusers import AutoencoderKL, DDIMScheduler, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer

        self.descriptor = descriptor
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.dtype = dtype or (torch.float16 if self.device == "cuda" else torch.float32)
        cache = os.environ.get(CACHE_DIR_ENV)
        ckpt = descriptor.checkpoint

        self.vae = AutoencoderKL.from_pretrained(
            ckpt, subfolder="vae", cache_dir=cache, torch_dtype=self.dtype).to(self.device)
        self.unet = UNet2DConditionModel.from_pretrained(
            ckpt, subfolder="unet", cache_dir=cache, torch_dtype=self.dtype).to(self.device)
        self.tokenizer = CLIPTokenizer.from_pretrained(ckpt, subfolder="tokenizer",
                                                       cache_dir=cache)
        self.text_encoder = CLIPTextModel.from_pretrained(
            ckpt, subfolder="text_encoder", cache_dir=cache,
            torch_dtype=self.dtype).to(self.device)
        self.scheduler = DDIMScheduler.from_pretrained(ckpt, subfolder="scheduler",
                                                       cache_dir=cache)
        for m in (self.vae, self.unet, self.text_encoder):
            m.eval().requires_grad_(False)

        self._install_processors()
        self._active_modulation = {}
        self._capture_into = None
        self._uncond = self._embed("")
        self._lock = threading.Lock()
        self._timesteps = None

    def _embed(self, prompt: str):
        import torch
        ids = self.tokenizer(prompt, padding="max_length",
                             max_length=self.tokenizer.model_max_length,
                             truncation=True, return_tensors="pt").input_ids
        with torch.no_grad():
            return self.text_encoder(ids.to(self.device))[0]

    def _install_processors(self):
        procs = dict(self.unet.attn_processors)
        names = {l.name for l in self.descriptor.layers}
        for key in procs:
            # processor keys end with ".processor"
            layer = key[: -len(".processor")]
            if layer in names:
                procs[key] = _RedirectingProcessor(self, layer)
        self.unet.set_attn_processor(procs)

    # -- weights ----------------------------------------------------------
    def weights_checksum(self) -> str:
        md = hashlib.sha256()
        for p in self.unet.parameters():
            md.update(p.detach().float().cpu().numpy().tobytes())
        return md.hexdigest()

    # -- latent I/O -------------------------------------------------------
    def encode(self, image: np.ndarray) -> np.ndarray:
        import cv2
        import torch
        h, w = self.descriptor.native_resolution
        img = np.asarray(image, dtype=np.float32)
        if img.shape[:2] != (h, w):
            img = cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA)
        x = torch.from_numpy(img).permute(2, 0, 1)[None].to(self.device, self.dtype)
        x = x * 2.0 - 1.0
        with torch.no_grad():
            latent = self.vae.encode(x).latent_dist.mode() * self.vae.config.scaling_factor
        return latent[0].float().cpu().numpy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        import torch
        z = torch.from_numpy(np.asarray(latent, dtype=np.float32))[None].to(
            self.device, self.dtype) / self.vae.config.scaling_factor
        with torch.no_grad():
            img = self.vae.decode(z).sample[0]
        img = (img / 2 + 0.5).clamp(0, 1)
        return img.permute(1, 2, 0).float().cpu().numpy()

    # -- denoising --------------------------------------------------------
    def _set_timesteps(self, steps: int):
        self.scheduler.set_timesteps(steps, device=self.device)
        self._timesteps = self.scheduler.timesteps

    def _unet_eps(self, latent, t):
        import torch
        with torch.no_grad():
            return self.unet(latent, t, encoder_hidden_states=self._uncond).sample

    def invert(self, latent: np.ndarray, steps: int, seed: int = 0):
        """DDIM inversion (eta = 0) with the empty-prompt prediction."""
        import torch
        with self._lock:
            self._set_timesteps(steps)
            z = torch.from_numpy(np.asarray(latent, dtype=np.float32))[None].to(
                self.device, self.dtype)
            trajectory = [latent.copy()]
            alphas = self.scheduler.alphas_cumprod.to(self.device)
            timesteps = list(reversed(self._timesteps))
            for i, t in enumerate(timesteps):
                eps = self._unet_eps(z, t)
                a_t = alphas[t]
                a_prev = alphas[timesteps[i - 1]] if i > 0 else self.scheduler.final_alpha_cumprod.to(self.device)
                x0 = (z - (1 - a_prev).sqrt() * eps) / a_prev.sqrt()
                z = a_t.sqrt() * x0 + (1 - a_t).sqrt() * eps
                trajectory.append(z[0].float().cpu().numpy())
            state = LatentState(values=trajectory[-1], t=int(self._timesteps[0]),
                                step_index=0, seed=seed)
            return state, trajectory

    def predict_noise(self, latent_state: LatentState, modulation=None) -> NoisePrediction:
        import torch
        self._validate_modulation(modulation)
        with self._lock:
            self._active_modulation = dict(modulation) if modulation else {}
            try:
                z = torch.from_numpy(latent_state.values)[None].to(self.device, self.dtype)
                eps = self._unet_eps(z, latent_state.t)
            finally:
                self._active_modulation = {}
        variant = ORIGINAL if not modulation else MODULATED
        return NoisePrediction(values=eps[0].float().cpu().numpy(), variant=variant)

    def _validate_modulation(self, modulation):
        if not modulation:
            return
        by_name = {l.name: l for l in self.descriptor.layers}
        for name, mod in modulation.items():
            if name not in by_name:
                raise ValueError(f"unknown attention layer {name!r}")
            if tuple(mod.resolution) != tuple(by_name[name].resolution):
                raise ValueError(f"modulation resolution {mod.resolution} does not "
                                 f"match layer {name} at {by_name[name].resolution}")

    def denoise_step(self, latent_state: LatentState, eps: NoisePrediction) -> LatentState:
        import torch
        with self._lock:
            z = torch.from_numpy(latent_state.values)[None].to(self.device, self.dtype)
            e = torch.from_numpy(eps.values)[None].to(self.device, self.dtype)
            out = self.scheduler.step(e, latent_state.t, z, eta=0.0).prev_sample
        idx = self._timesteps.tolist().index(latent_state.t)
        next_t = int(self._timesteps[idx + 1]) if idx + 1 < len(self._timesteps) else 0
        return LatentState(values=out[0].float().cpu().numpy(), t=next_t,
                           step_index=latent_state.step_index + 1,
                           seed=latent_state.seed)

    def capture_attention(self, latent_state: LatentState, layer_selector=None) -> dict:
        import torch
        names = list(layer_selector or self.descriptor.map_extraction_layers)
        by_name = {l.name for l in self.descriptor.layers}
        for n in names:
            if n not in by_name:
                raise ValueError(f"unknown attention layer {n!r}")
        with self._lock:
            self._capture_into = {}
            try:
                z = torch.from_numpy(latent_state.values)[None].to(self.device, self.dtype)
                self._unet_eps(z, latent_state.t)
                captured = self._capture_into
            finally:
                self._capture_into = None
        return {n: captured[n] for n in names}
