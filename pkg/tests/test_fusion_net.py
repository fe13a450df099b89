import numpy as np
import pytest
import torch

from semfuse.core import AttentionVariant, ShapeMismatchError, TrainConfig
from semfuse.fusion_net import (
    ChannelGate,
    Decoder,
    Encoder,
    FuseBlock,
    FusionNet,
    IdentityGate,
    SelfAttentionGate,
    SpatialGate,
    efficient_attention,
    make_variant,
    pair_to_tensors,
    strengthen,
)


def reference_attention(x, wq, wk, wv):
    """Explicit-normalization reference: per-column softmax over tokens, then
    the C x C context, then the query read-out; plain numpy float64."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, h, w))
    for bi in range(b):
        tokens = x[bi].reshape(c, h * w).T  # (N, C)
        q = tokens @ wq.T
        k = tokens @ wk.T
        v = tokens @ wv.T
        k_norm = np.zeros_like(k)
        for col in range(c):
            z = k[:, col] - k[:, col].max()
            e = np.exp(z)
            k_norm[:, col] = e / e.sum()
        context = k_norm.T @ v
        attended = q @ context
        out[bi] = attended.T.reshape(c, h, w)
    return out


def attention_instance(seed, n_side=3, channels=4, batch=1):
    rng = np.random.default_rng(seed)
    x = torch.tensor(rng.uniform(0, 1, (batch, channels, n_side, n_side)))
    gate = SelfAttentionGate(channels).double()
    with torch.no_grad():
        for lin in (gate.w_q, gate.w_k, gate.w_v):
            lin.weight.copy_(torch.tensor(rng.normal(0, 0.5, (channels, channels))))
    return x, gate


class TestEncoder:
    def test_pyramid_shapes(self):
        enc = Encoder(scales=3, base_channels=16)
        feats = enc(torch.rand(2, 1, 64, 64))
        assert [tuple(f.shape) for f in feats] == [
            (2, 16, 64, 64), (2, 32, 32, 32), (2, 64, 16, 16)]

    def test_zero_input_zero_biases_gives_zero_maps(self):
        enc = Encoder(scales=3, base_channels=8)
        with torch.no_grad():
            for name, p in enc.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
            feats = enc(torch.zeros(1, 1, 16, 16))
        assert all(float(f.abs().max()) == 0.0 for f in feats)

    def test_max_pool_matches_window_maxima(self, rng):
        x = torch.tensor(rng.uniform(0, 1, (1, 1, 16, 16)))
        pooled = torch.nn.functional.max_pool2d(x, 2)[0, 0]
        for i in range(8):
            for j in range(8):
                window = x[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert float(pooled[i, j]) == float(window.max())

    def test_divisibility_enforced(self):
        enc = Encoder(scales=3, base_channels=4)
        with pytest.raises(ShapeMismatchError):
            enc(torch.rand(1, 1, 18, 18))


class TestEfficientAttention:
    def test_single_token_exact(self):
        # softmax over one token gives weight 1, so the context is 1^T v and
        # the output collapses to sum(q) * v
        x, gate = attention_instance(0, n_side=1)
        tokens = x.flatten(2).transpose(1, 2)
        q = gate.w_q(tokens)[0, 0].detach()
        v = gate.w_v(tokens)[0, 0].detach()
        got = gate(x).detach().flatten()
        assert torch.allclose(got, q.sum() * v, atol=1e-12)

    def test_matches_reference_small_case(self):
        x, gate = attention_instance(1, n_side=3, channels=4)
        expected = reference_attention(
            x.numpy(),
            gate.w_q.weight.detach().numpy(),
            gate.w_k.weight.detach().numpy(),
            gate.w_v.weight.detach().numpy(),
        )
        got = gate(x).detach().numpy()
        assert np.allclose(got, expected, atol=1e-6)

    def test_matches_reference_many_random_instances(self):
        rng = np.random.default_rng(2)
        for trial in range(30):
            n_side = int(rng.integers(1, 7))
            channels = int(rng.integers(2, 12))
            x, gate = attention_instance(100 + trial, n_side, channels,
                                         batch=int(rng.integers(1, 3)))
            expected = reference_attention(
                x.numpy(),
                gate.w_q.weight.detach().numpy(),
                gate.w_k.weight.detach().numpy(),
                gate.w_v.weight.detach().numpy(),
            )
            assert np.allclose(gate(x).detach().numpy(), expected, atol=1e-6)

    def test_duplicated_tokens_leave_context_unchanged(self):
        x, gate = attention_instance(3, n_side=3, channels=4)
        tokens = x.flatten(2).transpose(1, 2)
        doubled = torch.cat([tokens, tokens], dim=1)

        def context_of(t):
            k = gate.w_k(t)
            v = gate.w_v(t)
            return (torch.softmax(k, dim=1).transpose(1, 2) @ v).detach()

        assert torch.allclose(context_of(tokens), context_of(doubled), atol=1e-10)

    def test_module_wraps_free_function(self):
        x, gate = attention_instance(4, n_side=2, channels=3)
        direct = efficient_attention(x, gate.w_q, gate.w_k, gate.w_v)
        with torch.no_grad():
            assert torch.equal(gate(x), direct)

    def test_never_materializes_token_square(self):
        # N = 4096 tokens would need a 128 MiB N x N map; linear form stays small
        x = torch.rand(1, 8, 64, 64)
        gate = SelfAttentionGate(8)
        out = gate(x)
        assert out.shape == x.shape


class TestStrengthen:
    def test_zero_attention_is_identity(self, rng):
        f = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        assert torch.equal(strengthen(f, torch.zeros_like(f)), f)

    def test_unit_attention_doubles(self, rng):
        f = torch.tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        assert torch.allclose(strengthen(f, torch.ones_like(f)), 2 * f)

    def test_elementwise_formula(self, rng):
        f = torch.tensor(rng.uniform(0, 1, (2, 3, 4, 4)))
        a = torch.tensor(rng.normal(0, 1, (2, 3, 4, 4)))
        out = strengthen(f, a)
        assert torch.allclose(out, f * (1 + a), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            strengthen(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 2, 2))


class TestFuseBlock:
    def test_equal_inputs_with_shared_gate_reduce_to_strengthen(self, rng):
        block = FuseBlock(4, AttentionVariant.SLA).double()
        block.gate_vis.load_state_dict(block.gate_ir.state_dict())
        f = torch.tensor(rng.uniform(0, 1, (1, 4, 3, 3)))
        out = block(f, f)
        expected = strengthen(f, block.gate_ir(f))
        assert torch.allclose(out, expected, atol=1e-12)

    def test_none_variant_is_plain_average(self, rng):
        block = FuseBlock(4, AttentionVariant.NONE)
        fi = torch.tensor(rng.uniform(0, 1, (1, 4, 4, 4)), dtype=torch.float32)
        fv = torch.tensor(rng.uniform(0, 1, (1, 4, 4, 4)), dtype=torch.float32)
        assert torch.allclose(block(fi, fv), (fi + fv) / 2, atol=1e-7)

    def test_compositional_oracle(self, rng):
        block = FuseBlock(4, AttentionVariant.SLA).double()
        fi = torch.tensor(rng.uniform(0, 1, (1, 4, 3, 3)))
        fv = torch.tensor(rng.uniform(0, 1, (1, 4, 3, 3)))
        expected = (strengthen(fi, block.gate_ir(fi))
                    + strengthen(fv, block.gate_vis(fv))) / 2
        assert torch.allclose(block(fi, fv), expected, atol=1e-12)

    def test_shape_mismatch(self):
        block = FuseBlock(4, AttentionVariant.NONE)
        with pytest.raises(ShapeMismatchError):
            block(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 8, 8))


class TestVariants:
    def test_factory_types(self):
        assert isinstance(make_variant(AttentionVariant.SLA, 8), SelfAttentionGate)
        assert isinstance(make_variant(AttentionVariant.CHA, 8), ChannelGate)
        assert isinstance(make_variant(AttentionVariant.SPA, 8), SpatialGate)
        assert isinstance(make_variant(AttentionVariant.NONE, 8), IdentityGate)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            make_variant("SWIRL", 8)

    def test_channel_gate_zero_logits_give_half(self, rng):
        gate = ChannelGate(8)
        with torch.no_grad():
            gate.fc2.weight.zero_()
            gate.fc2.bias.zero_()
        f = torch.tensor(rng.uniform(0, 1, (2, 8, 4, 4)), dtype=torch.float32)
        out = strengthen(f, gate(f))
        assert torch.allclose(out, 1.5 * f, atol=1e-6)

    def test_spatial_gate_map_is_single_channel(self, rng):
        gate = SpatialGate(8)
        f = torch.tensor(rng.uniform(0, 1, (2, 8, 6, 6)), dtype=torch.float32)
        assert gate.gate_map(f).shape == (2, 1, 6, 6)
        assert gate(f).shape == f.shape

    def test_gates_stay_in_unit_interval(self, rng):
        f = torch.tensor(rng.normal(0, 2, (1, 8, 4, 4)), dtype=torch.float32)
        for variant in (AttentionVariant.CHA, AttentionVariant.SPA):
            gate = make_variant(variant, 8)
            with torch.no_grad():
                a = gate(f)
            assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0


class TestDecoder:
    def test_output_shape_full_resolution(self):
        for scales, bc in ((2, 4), (3, 8), (4, 4)):
            cfg = TrainConfig(scales=scales, base_channels=bc)
            net = FusionNet(cfg)
            out = net(torch.rand(1, 1, 32, 32), torch.rand(1, 1, 32, 32))
            assert out.shape == (1, 1, 32, 32)

    def test_zero_final_layer_gives_sigmoid_of_zero(self):
        dec = Decoder(scales=2, base_channels=4)
        with torch.no_grad():
            dec.head.weight.zero_()
            dec.head.bias.zero_()
        fused = [torch.rand(1, 4, 8, 8), torch.rand(1, 8, 4, 4)]
        out = dec(fused)
        assert torch.allclose(out, torch.full_like(out, 0.5))

    def test_every_decoder_parameter_gradient_matches_fd(self):
        torch.manual_seed(0)
        dec = Decoder(scales=2, base_channels=4).double()
        fused = [torch.rand(1, 4, 8, 8, dtype=torch.double),
                 torch.rand(1, 8, 4, 4, dtype=torch.double)]
        dec(fused).mean().backward()
        h = 1e-5
        for name, p in dec.named_parameters():
            flat = p.detach().flatten()
            gflat = p.grad.flatten()
            for idx in range(flat.numel()):
                orig = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = orig + h
                    up = float(dec(fused).mean())
                    flat[idx] = orig - h
                    dn = float(dec(fused).mean())
                    flat[idx] = orig
                fd = (up - dn) / (2 * h)
                g = float(gflat[idx])
                if abs(g) > 1e-6:
                    assert abs(g - fd) / max(abs(g), abs(fd)) < 1e-4, name


class TestFusionNet:
    def test_output_bounded_for_random_parameters(self, rng):
        for seed in range(3):
            cfg = TrainConfig(scales=2, base_channels=4, seed=seed)
            net = FusionNet(cfg)
            with torch.no_grad():
                out = net(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16))
            assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_swapping_modalities_and_parameters_is_symmetric(self):
        cfg = TrainConfig(scales=2, base_channels=4, seed=5)
        net = FusionNet(cfg)
        swapped = FusionNet(cfg)
        state = net.state_dict()
        mirrored = {}
        for key, value in state.items():
            if key.startswith("encoder_ir."):
                mirrored["encoder_vis." + key[len("encoder_ir."):]] = value
            elif key.startswith("encoder_vis."):
                mirrored["encoder_ir." + key[len("encoder_vis."):]] = value
            elif ".gate_ir." in key:
                mirrored[key.replace(".gate_ir.", ".gate_vis.")] = value
            elif ".gate_vis." in key:
                mirrored[key.replace(".gate_vis.", ".gate_ir.")] = value
            else:
                mirrored[key] = value
        swapped.load_state_dict(mirrored)
        ir, vis = torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16)
        with torch.no_grad():
            assert torch.equal(net(ir, vis), swapped(vis, ir))

    def test_seeded_init_is_bit_identical(self):
        cfg = TrainConfig(scales=2, base_channels=4, seed=11)
        a, b = FusionNet(cfg), FusionNet(cfg)
        for (ka, pa), (kb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb and torch.equal(pa, pb)
        x = torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16)
        with torch.no_grad():
            assert torch.equal(a(*x), b(*x))

    def test_different_seeds_differ(self):
        a = FusionNet(TrainConfig(seed=1))
        b = FusionNet(TrainConfig(seed=2))
        assert any(not torch.equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_parameter_count_is_function_of_config(self):
        def count(**kw):
            return sum(p.numel() for p in FusionNet(TrainConfig(**kw)).parameters())

        assert count(seed=1) == count(seed=2)
        assert count(scales=2) != count(scales=3)
        assert count(base_channels=8) != count(base_channels=16)
        assert count(attention_variant="NONE") != count(attention_variant="SLA")

    def test_pair_round_trip_shapes(self, tiny_pairs):
        ir, vis = pair_to_tensors(tiny_pairs[0])
        assert ir.shape == (1, 1, 16, 16) and vis.shape == (1, 1, 16, 16)
