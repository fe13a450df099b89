import numpy as np
import pytest
import torch

from semfuse.core import ShapeMismatchError, TrainConfig
from semfuse.fusion_net import FusionNet
from semfuse.losses import l_sem
from semfuse.seg_net import SegNet, build_seg_net, predict


class TestSegForward:
    @pytest.mark.parametrize("k", [2, 4, 9])
    def test_logits_shape(self, k):
        net = SegNet(class_count=k, width=0.25)
        out = net(torch.rand(1, 1, 64, 64))
        assert out.shape == (1, k, 64, 64)

    def test_stride_divisibility_enforced(self):
        net = SegNet(class_count=4, width=0.25)
        with pytest.raises(ShapeMismatchError):
            net(torch.rand(1, 1, 12, 12))

    def test_deterministic_given_seed(self):
        a = SegNet(4, width=0.5, seed=3)
        b = SegNet(4, width=0.5, seed=3)
        x = torch.rand(1, 1, 16, 16)
        with torch.no_grad():
            assert torch.equal(a(x), b(x))

    def test_parameter_budget_via_width(self):
        half = sum(p.numel() for p in SegNet(4, width=0.5).parameters())
        default = sum(p.numel() for p in SegNet(4, width=1.0).parameters())
        assert 50_000 <= half <= 500_000
        assert 50_000 <= default <= 500_000
        assert half < default

    def test_input_gradient_nonzero_and_matches_fd(self):
        torch.manual_seed(0)
        net = SegNet(4, width=0.25, seed=1).double()
        labels = torch.randint(0, 4, (8, 8))
        x0 = torch.rand(1, 1, 8, 8, dtype=torch.double)

        def loss_of(x):
            return l_sem(net(x)[0], labels).value

        x = x0.clone().requires_grad_(True)
        loss_of(x).backward()
        rng = np.random.default_rng(2)
        h = 1e-6
        checked_nonzero = 0
        for i, j in rng.integers(0, 8, (3, 2)):
            up, dn = x0.clone(), x0.clone()
            up[0, 0, i, j] += h
            dn[0, 0, i, j] -= h
            fd = (float(loss_of(up).detach()) - float(loss_of(dn).detach())) / (2 * h)
            g = float(x.grad[0, 0, i, j])
            if abs(g) > 1e-8:
                checked_nonzero += 1
                assert abs(g - fd) / max(abs(g), abs(fd)) < 1e-4
        assert checked_nonzero > 0

    def test_gradient_reaches_fusion_parameters(self):
        # the joint objective must differentiate end to end through the fused image
        cfg = TrainConfig(scales=2, base_channels=4, seg_width=0.25, seed=0)
        fusion = FusionNet(cfg)
        seg = build_seg_net(cfg)
        ir, vis = torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16)
        labels = torch.randint(0, 4, (1, 16, 16))
        loss = l_sem(seg(fusion(ir, vis)), labels).value
        loss.backward()
        grads = [p.grad for p in fusion.parameters() if p.grad is not None]
        assert grads and any(float(g.abs().max()) > 0 for g in grads)


class TestPredict:
    def test_constant_winner(self):
        logits = torch.zeros(4, 5, 5)
        logits[2] = 3.0
        assert np.array_equal(predict(logits), np.full((5, 5), 2))

    def test_tie_breaks_to_lower_index(self):
        logits = torch.zeros(4, 1, 1)
        logits[1, 0, 0] = 7.0
        logits[3, 0, 0] = 7.0
        assert predict(logits)[0, 0] == 1

    def test_shift_invariance(self, rng):
        logits = torch.tensor(rng.normal(size=(4, 6, 6)))
        shifted = logits + torch.tensor(rng.normal(size=(1, 6, 6)))
        assert np.array_equal(predict(logits), predict(shifted))

    def test_batched_input(self, rng):
        logits = torch.tensor(rng.normal(size=(2, 3, 4, 4)))
        out = predict(logits)
        assert out.shape == (2, 4, 4)
        assert np.array_equal(out[0], predict(logits[0]))
