from __future__ import annotations

import numpy as np
import pytest

from cpt.blocks import (
    AttentionMask,
    AttentionWeights,
    BlockWeights,
    decoder_layer,
    embed,
    encoder_layer,
    init_array,
    multi_head_attention,
)
from cpt.exceptions import ConfigError, IndexLookupError
from cpt.models.config import model_preset
from cpt.network import CPTParams, encode, generate_forward, understand
from cpt.tensor import Tensor, gradcheck
from cpt.vocab import BOS_ID


def _attention(hidden, heads, rng):
    shapes = AttentionWeights.shapes(hidden)
    arrays = {f"a.{n}": Tensor.parameter(init_array(n, s, rng, 0.3)) for n, s in shapes.items()}
    return AttentionWeights.from_arrays(arrays, "a", heads)


class TestAttention:
    def test_causal_probabilities_are_lower_triangular(self, rng):
        weights = _attention(8, 2, rng)
        x = Tensor(rng.normal(size=(1, 5, 8)))
        _, probs = multi_head_attention(x, x, x, AttentionMask("causal"), weights, return_weights=True)
        upper = np.triu(np.ones((5, 5), dtype=bool), k=1)
        assert np.all(probs.values[..., upper] == 0.0)
        np.testing.assert_allclose(probs.values.sum(axis=-1), 1.0, atol=1e-12)

    def test_padded_keys_get_zero_weight(self, rng):
        weights = _attention(8, 2, rng)
        x = Tensor(rng.normal(size=(2, 4, 8)))
        mask = np.array([[True, True, True, True], [True, True, False, False]])
        _, probs = multi_head_attention(x, x, x, AttentionMask("full", mask), weights, return_weights=True)
        assert np.all(probs.values[1, :, :, 2:] == 0.0)

    def test_heads_must_divide_hidden(self, rng):
        with pytest.raises(ConfigError):
            _attention(6, 4, rng)


class TestLayers:
    def test_encoder_ignores_pad_content(self, tiny_params, rng):
        layer = tiny_params.enc_layers[0]
        x = rng.normal(size=(1, 6, 16))
        other = x.copy()
        other[0, 4:] = rng.normal(size=(2, 16))
        mask = np.array([[True] * 4 + [False] * 2])
        a = encoder_layer(Tensor(x), mask, layer).values
        b = encoder_layer(Tensor(other), mask, layer).values
        np.testing.assert_allclose(a[0, :4], b[0, :4], atol=1e-12)

    def test_decoder_position_ignores_future(self, tiny_params, rng):
        layer = tiny_params.gdec_layers[0]
        enc = Tensor(rng.normal(size=(1, 3, 16)))
        x = rng.normal(size=(1, 5, 16))
        changed = x.copy()
        changed[0, 3:] += 1.0
        a = decoder_layer(Tensor(x), enc, AttentionMask("causal"), None, layer).values
        b = decoder_layer(Tensor(changed), enc, AttentionMask("causal"), None, layer).values
        np.testing.assert_allclose(a[0, :3], b[0, :3], atol=1e-12)
        assert not np.allclose(a[0, 3], b[0, 3])

    def test_decoder_requires_causal_mask(self, tiny_params, rng):
        x = Tensor(rng.normal(size=(1, 2, 16)))
        with pytest.raises(ConfigError):
            decoder_layer(x, None, AttentionMask("full"), None, tiny_params.gdec_layers[0])

    def test_decoder_without_cross_weights(self, tiny_params, rng):
        x = Tensor(rng.normal(size=(1, 2, 16)))
        with pytest.raises(ConfigError):
            decoder_layer(x, x, AttentionMask("causal"), None, tiny_params.enc_layers[0])

    def test_block_names(self):
        names = BlockWeights.shapes(16, 4, cross=True, prefix="gdec.0")
        assert names["gdec.0.cross_attn.q.weight"] == (16, 16)
        assert names["gdec.0.ffn.in.weight"] == (16, 64)
        assert "gdec.0.cross_norm.gain" in names

    def test_encoder_layer_gradients(self, tiny_params, rng):
        layer = tiny_params.enc_layers[0]
        x = Tensor(rng.normal(size=(2, 3, 16)))
        mask = np.array([[True, True, True], [True, True, False]])
        target = rng.normal(size=(2, 3, 16))
        checked = [layer.self_attn.q_w, layer.ffn.in_w, layer.self_norm.gain]
        err = gradcheck(
            lambda: (encoder_layer(x, mask, layer) * target).sum(),
            checked,
            samples_per_param=6,
            rng=rng,
        )
        assert err < 1e-4


class TestEmbed:
    def test_bad_token(self, tiny_params):
        with pytest.raises(IndexLookupError):
            embed(np.array([[1, 39]]), 0, tiny_params.token_embeddings, tiny_params.position_embeddings, tiny_params.enc_embed_norm)

    def test_position_past_table(self, tiny_params):
        with pytest.raises(IndexLookupError):
            embed(np.array([[1, 2]]), 63, tiny_params.token_embeddings, tiny_params.position_embeddings, tiny_params.enc_embed_norm)


class TestStackInvariants:
    def test_encoder_layer_is_permutation_equivariant(self, wide_params, rng):
        layer = wide_params.enc_layers[0]
        x = rng.normal(size=(1, 5, 16))
        perm = np.array([0, 3, 2, 1, 4])
        out = encoder_layer(Tensor(x), None, layer).values
        swapped = encoder_layer(Tensor(x[:, perm]), None, layer).values
        np.testing.assert_allclose(swapped, out[:, perm], atol=1e-12)

    @pytest.mark.parametrize("depth", [1, 2, 4])
    def test_generation_stack_is_causal(self, depth):
        config = model_preset("tiny", layers_enc=1, layers_udec=depth, layers_gdec=depth, init_std=0.5)
        params = CPTParams.initialize(config, np.random.default_rng(depth))
        src = np.array([[2, 10, 11, 12, 3]])
        enc = encode(src, src != 0, params)
        prefix = np.array([[BOS_ID, 20, 21, 22, 23, 24]])
        base = generate_forward(prefix, enc, src != 0, params).values
        for t in range(1, prefix.shape[1]):
            changed = prefix.copy()
            changed[0, t] = 30
            out = generate_forward(changed, enc, src != 0, params).values
            np.testing.assert_array_equal(out[0, :t], base[0, :t])
            assert not np.allclose(out[0, t], base[0, t])

    def test_padding_does_not_change_real_positions(self, wide_params):
        short = np.array([[2, 10, 11, 3]])
        batch = np.array([[2, 10, 11, 3, 0, 0], [2, 12, 13, 14, 15, 3]])
        alone = encode(short, short != 0, wide_params)
        padded = encode(batch, batch != 0, wide_params)
        np.testing.assert_allclose(padded.values[0, :4], alone.values[0], atol=1e-10)
        np.testing.assert_allclose(
            understand(padded, batch != 0, wide_params).values[0, :4],
            understand(alone, short != 0, wide_params).values[0],
            atol=1e-10,
        )
        prefix = np.array([[BOS_ID, 20, 21], [BOS_ID, 20, 21]])
        np.testing.assert_allclose(
            generate_forward(prefix[:1], alone, short != 0, wide_params).values[0],
            generate_forward(prefix, padded, batch != 0, wide_params).values[0],
            atol=1e-10,
        )
