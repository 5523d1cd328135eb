"""Encoder stacks: embedding, block structure, receptive fields, checkpoints."""

import numpy as np
import pytest

from gtrel import autodiff as ad
from gtrel.attention import NeighborMask
from gtrel.checkpoint import load_checkpoint, save_checkpoint
from gtrel.encoder import (
    EncoderConfig,
    embed,
    graph_encode,
    init_block_params,
    init_embedding_table,
    init_encoder_stack,
    transformer_encode,
)
from gtrel.errors import ConfigError, DatasetError, LengthError
from gtrel.rng import derive_rng


def tiny_config(**overrides):
    base = dict(
        width=4,
        n_heads=2,
        ffn_width=8,
        n_transformer_blocks=1,
        n_graph_blocks=1,
        dropout_rate=0.0,
        max_len=16,
        vocab_size=10,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def zeroed_blocks(cfg, n):
    blocks = init_encoder_stack(cfg, n, derive_rng(0, "z"))
    for bp in blocks:
        for name, tensor in bp.named_tensors("b"):
            if name.endswith("gain"):
                tensor.data = np.ones_like(tensor.data)
            else:
                tensor.data = np.zeros_like(tensor.data)
    return blocks


def random_mask(t, rng, density=0.4):
    allowed = rng.random((t, t)) < density
    np.fill_diagonal(allowed, True)
    return NeighborMask(allowed)


class TestConfig:
    def test_defaults_are_valid(self):
        EncoderConfig(vocab_size=100).validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"width": 6, "n_heads": 4},
            {"n_transformer_blocks": 0},
            {"n_graph_blocks": 0},
            {"dropout_rate": 1.0},
            {"vocab_size": 1},
        ],
    )
    def test_invalid_configs(self, overrides):
        with pytest.raises(ConfigError):
            tiny_config(**overrides).validate()


class TestEmbed:
    def test_empty_sequence(self):
        cfg = tiny_config()
        table = init_embedding_table(cfg, derive_rng(1, "init"))
        out = embed([], table, cfg)
        assert out.data.shape == (0, cfg.width)

    def test_same_token_differs_by_position(self):
        cfg = tiny_config()
        table = init_embedding_table(cfg, derive_rng(2, "init"))
        out = embed([3, 3], table, cfg)
        pos_diff = table.positions.data[0] - table.positions.data[1]
        np.testing.assert_allclose(out.data[0] - out.data[1], pos_diff, atol=1e-15)

    def test_fixed_seed_identical_tables(self):
        cfg = tiny_config()
        t1 = init_embedding_table(cfg, derive_rng(3, "init"))
        t2 = init_embedding_table(cfg, derive_rng(3, "init"))
        np.testing.assert_array_equal(t1.tokens.data, t2.tokens.data)
        np.testing.assert_array_equal(t1.positions.data, t2.positions.data)

    def test_unknown_id_maps_to_unk(self):
        cfg = tiny_config()
        table = init_embedding_table(cfg, derive_rng(4, "init"))
        out_bad = embed([999, -5], table, cfg)
        out_unk = embed([1, 1], table, cfg)
        np.testing.assert_array_equal(out_bad.data, out_unk.data)

    def test_too_long_raises(self):
        cfg = tiny_config(max_len=2)
        table = init_embedding_table(cfg, derive_rng(5, "init"))
        with pytest.raises(LengthError):
            embed([0, 1, 2], table, cfg)

    def test_init_row_norms_bounded(self):
        cfg = tiny_config(width=32, vocab_size=50, max_len=64)
        table = init_embedding_table(cfg, derive_rng(6, "init"))
        norms = np.linalg.norm(table.tokens.data, axis=1)
        assert (norms < 10 * np.sqrt(cfg.width)).all()


class TestTransformerEncode:
    def test_zero_weights_collapse_to_double_layer_norm(self):
        cfg = tiny_config()
        blocks = zeroed_blocks(cfg, 1)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, cfg.width))
        out = transformer_encode(ad.constant(x), cfg, blocks)
        ones = ad.constant(np.ones(cfg.width))
        zeros = ad.constant(np.zeros(cfg.width))
        expected = ad.layer_norm(ad.layer_norm(ad.constant(x), ones, zeros), ones, zeros)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_eval_mode_deterministic(self):
        cfg = tiny_config(dropout_rate=0.3)
        blocks = init_encoder_stack(cfg, 2, derive_rng(8, "init"))
        x = np.random.default_rng(9).normal(size=(4, cfg.width))
        a = transformer_encode(ad.constant(x), cfg, blocks).data
        b = transformer_encode(ad.constant(x), cfg, blocks).data
        np.testing.assert_array_equal(a, b)

    def test_single_block_matches_composition_oracle(self):
        """One block recomputed from the public module ops."""
        cfg = tiny_config(width=4, n_heads=1)
        (bp,) = init_encoder_stack(cfg, 1, derive_rng(10, "init"))
        rng = np.random.default_rng(11)
        x = ad.constant(rng.normal(size=(2, 4)))

        from gtrel.attention import self_attention

        attended = self_attention(x, bp.attn)
        normed = ad.layer_norm(ad.add(x, attended), bp.ln1_gain, bp.ln1_bias)
        inner = ad.gelu(ad.add(ad.matmul(normed, bp.ffn_w1), bp.ffn_b1))
        ff = ad.add(ad.matmul(inner, bp.ffn_w2), bp.ffn_b2)
        expected = ad.layer_norm(ad.add(normed, ff), bp.ln2_gain, bp.ln2_bias)

        out = transformer_encode(x, cfg, [bp])
        assert np.max(np.abs(out.data - expected.data)) < 1e-12

    def test_shape_preserved(self):
        cfg = tiny_config()
        blocks = init_encoder_stack(cfg, 3, derive_rng(12, "init"))
        x = np.random.default_rng(13).normal(size=(5, cfg.width))
        assert transformer_encode(ad.constant(x), cfg, blocks).data.shape == (5, cfg.width)

    def test_dropout_changes_training_forward(self):
        cfg = tiny_config(dropout_rate=0.5)
        blocks = init_encoder_stack(cfg, 1, derive_rng(14, "init"))
        x = np.random.default_rng(15).normal(size=(4, cfg.width))
        plain = transformer_encode(ad.constant(x), cfg, blocks).data
        dropped = transformer_encode(
            ad.constant(x), cfg, blocks, dropout_rng=np.random.default_rng(0)
        ).data
        assert not np.allclose(plain, dropped)


class TestGraphEncode:
    def test_complete_mask_equals_transformer(self):
        cfg = tiny_config(width=8, n_heads=2)
        blocks = init_encoder_stack(cfg, 2, derive_rng(16, "init"))
        x = np.random.default_rng(17).normal(size=(6, 8))
        full = graph_encode(ad.constant(x), NeighborMask.complete(6), cfg, blocks).data
        plain = transformer_encode(ad.constant(x), cfg, blocks).data
        assert np.max(np.abs(full - plain)) <= 1e-9

    def _receptive_field(self, mask, i, hops):
        reach = {i}
        for _ in range(hops):
            reach = reach | {j for r in reach for j in np.flatnonzero(mask.allowed[r])}
        return reach

    @pytest.mark.parametrize("hops", [1, 2])
    def test_receptive_field_bounded_by_hops(self, hops):
        cfg = tiny_config(width=8, n_heads=2)
        rng = np.random.default_rng(18 + hops)
        blocks = init_encoder_stack(cfg, hops, derive_rng(19, "init", hops))
        t = 7
        x = rng.normal(size=(t, 8))
        mask = random_mask(t, rng)
        base = graph_encode(ad.constant(x), mask, cfg, blocks).data
        for i in range(t):
            reach = self._receptive_field(mask, i, hops)
            outside = [j for j in range(t) if j not in reach]
            if not outside:
                continue
            perturbed = x.copy()
            for j in outside:
                perturbed[j] += rng.normal(size=8)
            out = graph_encode(ad.constant(perturbed), mask, cfg, blocks).data
            assert np.array_equal(out[i], base[i]), (i, hops)

    def test_whole_encoder_gradcheck(self):
        cfg = tiny_config(width=4, n_heads=2, ffn_width=8)
        blocks = init_encoder_stack(cfg, 1, derive_rng(20, "init"))
        rng = np.random.default_rng(21)
        x = ad.parameter(rng.normal(size=(3, 4)))
        mask = random_mask(3, rng)
        tensors = [x] + [t for bp in blocks for _, t in bp.named_tensors("b")]

        def f():
            out = graph_encode(x, mask, cfg, blocks)
            return ad.cross_entropy(out, [0, 1, 2])

        assert ad.grad_check(f, tensors) < 1e-4


class TestCheckpointFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(22)
        named = [("a.weight", rng.normal(size=(3, 4))), ("b.bias", rng.normal(size=5))]
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, {"width": 4, "note": "test"}, named)
        meta, tensors = load_checkpoint(path)
        assert meta == {"width": 4, "note": "test"}
        for name, arr in named:
            np.testing.assert_array_equal(tensors[name], arr)

    def test_header_is_json_line_then_floats(self, tmp_path):
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, {}, [("x", np.array([1.0, 2.0]))])
        raw = path.read_bytes()
        header, payload = raw.split(b"\n", 1)
        import json

        parsed = json.loads(header)
        assert parsed["version"] == 1
        assert np.frombuffer(payload, dtype="<f8").tolist() == [1.0, 2.0]

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, {}, [("x", np.ones((4, 4)))])
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DatasetError):
            load_checkpoint(path)

    def test_deterministic_bytes(self, tmp_path):
        named = [("w", np.arange(6, dtype=float).reshape(2, 3))]
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, {"k": 1}, named)
        save_checkpoint(p2, {"k": 1}, named)
        assert p1.read_bytes() == p2.read_bytes()
