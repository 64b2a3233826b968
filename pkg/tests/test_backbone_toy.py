import numpy as np
import pytest

from clickremoval.attention_control import modulation_for
from clickremoval.backbone import (MODULATED, ORIGINAL, LatentState, ToyBackbone,
                                   load_backbone, load_descriptor)
from clickremoval.semantic_map import RemovalMaps


def identity_modulation(n=256, res=(16, 16)):
    maps = RemovalMaps(m_ob=np.zeros(n, dtype=np.uint8),
                       m_bg_tilde=np.zeros(n), resolution=res)
    return modulation_for(maps, 1.0, 1e4)


def state_of(latent, t=10):
    return LatentState(values=latent, t=t, step_index=0)


class TestDescriptors:
    @pytest.mark.parametrize("preset", ["toy", "sd15", "sd21", "sdxl10"])
    def test_presets_load(self, preset):
        desc = load_descriptor(preset)
        assert desc.preset == preset
        assert desc.layers
        gh, gw = desc.latent_grid
        for layer in desc.layers:
            lh, lw = layer.resolution
            assert gh % lh == 0 and gw % lw == 0

    def test_toy_needs_no_checkpoint(self):
        assert load_descriptor("toy").checkpoint is None

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            load_descriptor("sd99")

    def test_unknown_layer_lookup(self):
        with pytest.raises(KeyError):
            load_descriptor("toy").layer("nope")


class TestLatentIO:
    def test_roundtrip_exact(self, toy, rng):
        img = rng.random((16, 16, 3))
        assert np.array_equal(toy.decode(toy.encode(img)), img)

    def test_zero_image_zero_latent(self, toy):
        assert not toy.encode(np.zeros((16, 16, 3))).any()

    def test_resize_or_reject(self, toy):
        out = toy.encode(np.full((32, 32, 3), 0.25))
        assert out.shape == (3, 16, 16)
        strict = ToyBackbone(resize_inputs=False)
        with pytest.raises(ValueError):
            strict.encode(np.zeros((32, 32, 3)))


class TestInversion:
    def test_invert_then_denoise_recovers_latent(self, toy, rng):
        latent = toy.encode(rng.random((16, 16, 3)))
        state, trajectory = toy.invert(latent, 12)
        assert len(trajectory) == 13
        for _ in range(12):
            state = toy.denoise_step(state, toy.predict_noise(state))
        np.testing.assert_allclose(state.values, latent, atol=1e-10)

    def test_zero_latent_stays_zero(self, toy):
        state, _ = toy.invert(np.zeros((3, 16, 16)), 5)
        assert not state.values.any()

    def test_invalid_steps(self, toy):
        with pytest.raises(ValueError):
            toy.invert(np.zeros((3, 16, 16)), 0)


class TestPredictNoise:
    def test_identity_modulation_bit_identical(self, toy, rng):
        latent = rng.standard_normal((3, 16, 16))
        mod = {l.name: identity_modulation() for l in toy.descriptor.layers}
        plain = toy.predict_noise(state_of(latent))
        modded = toy.predict_noise(state_of(latent), mod)
        assert np.array_equal(plain.values, modded.values)
        assert plain.variant == ORIGINAL and modded.variant == MODULATED

    def test_matches_closed_form_from_captured_attention(self, toy, rng):
        # independent recomputation: eps = x - mean-attention @ x
        latent = rng.standard_normal((3, 16, 16))
        captured = toy.capture_attention(state_of(latent))
        kernel = np.mean([heads.mean(axis=0) for heads in captured.values()], axis=0)
        x = latent.reshape(3, 256)
        expected = (x - x @ kernel.T).reshape(3, 16, 16)
        out = toy.predict_noise(state_of(latent))
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_modulation_resolution_checked(self, toy):
        maps = RemovalMaps(m_ob=np.zeros(64, dtype=np.uint8),
                           m_bg_tilde=np.zeros(64), resolution=(8, 8))
        bad = {"dec0": modulation_for(maps, 0.5, 1e4)}
        with pytest.raises(ValueError):
            toy.predict_noise(state_of(np.zeros((3, 16, 16))), bad)

    def test_unknown_layer_rejected(self, toy):
        bad = {"enc0": identity_modulation()}
        with pytest.raises(KeyError):
            toy.predict_noise(state_of(np.zeros((3, 16, 16))), bad)


class TestCaptureAttention:
    def test_fixed_maps_and_stochastic_rows(self, toy):
        maps = toy.capture_attention(state_of(np.zeros((3, 16, 16))))
        assert set(maps) == {"dec0", "dec1"}
        for heads in maps.values():
            assert heads.shape == (2, 256, 256)
            np.testing.assert_allclose(heads.sum(axis=-1), 1.0, atol=1e-6)

    def test_deterministic_across_calls(self, toy, rng):
        latent = rng.standard_normal((3, 16, 16))
        a = toy.capture_attention(state_of(latent))
        b = toy.capture_attention(state_of(latent))
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_unknown_selector(self, toy):
        with pytest.raises(KeyError):
            toy.capture_attention(state_of(np.zeros((3, 16, 16))), ["bogus"])


class TestFrozenWeights:
    def test_operations_leave_weights_unchanged(self, toy, rng):
        before = toy.weights_checksum()
        latent = toy.encode(rng.random((16, 16, 3)))
        state, _ = toy.invert(latent, 6)
        toy.predict_noise(state)
        toy.capture_attention(state)
        toy.decode(latent)
        assert toy.weights_checksum() == before


class TestDeterminism:
    def test_full_pass_bit_identical(self, rng):
        img = rng.random((16, 16, 3))
        outs = []
        for _ in range(2):
            bk = ToyBackbone()
            state, _ = bk.invert(bk.encode(img), 8, seed=7)
            for _ in range(8):
                state = bk.denoise_step(state, bk.predict_noise(state))
            outs.append(bk.decode(state.values))
        assert np.array_equal(outs[0], outs[1])


def test_load_backbone_toy():
    assert isinstance(load_backbone("toy"), ToyBackbone)
