import numpy as np
import pytest
import torch

from oreo.errors import ConfigError
from oreo.model import (
    BackboneConfig,
    Backbone,
    MaskHead,
    OreoModel,
    aggregate,
    attend_level2,
    attend_level3,
    bilinear_upsample,
    init_params,
    render_attention_raster,
)

from oracles import bilinear_oracle, check_gradients, matvec_oracle


def tiny_config(**overrides):
    base = dict(channels=(4, 4, 8, 8), embedding_dim=8, image_size=16)
    base.update(overrides)
    return BackboneConfig(**base)


class TestBackbone:
    def test_shape_contract(self):
        config = BackboneConfig(channels=(8, 16, 32, 64), embedding_dim=32, image_size=64)
        net = init_params(Backbone(config), seed=0)
        maps = net(torch.zeros(2, 1, 64, 64))
        assert maps.b1.shape == (2, 8, 32, 32)
        assert maps.b2.shape == (2, 16, 16, 16)
        assert maps.b3.shape == (2, 32, 8, 8)
        assert maps.b4.shape == (2, 64, 4, 4)
        assert maps.t_g.shape == (2, 32)

    @pytest.mark.parametrize("size", [16, 32, 48])
    def test_shape_contract_grid(self, size):
        config = tiny_config(image_size=size)
        net = init_params(Backbone(config), seed=1)
        maps = net(torch.rand(1, 1, size, size))
        for k, b in enumerate([maps.b1, maps.b2, maps.b3, maps.b4], start=1):
            assert b.shape[-1] == size // 2**k
        assert torch.isfinite(maps.t_g).all()

    def test_zero_params_give_zero_embedding(self):
        net = Backbone(tiny_config())
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        maps = net(torch.rand(3, 1, 16, 16))
        assert torch.allclose(maps.t_g, torch.zeros(3, 8))

    def test_size_mismatch_raises(self):
        net = Backbone(tiny_config())
        with pytest.raises(ConfigError):
            net(torch.zeros(1, 1, 32, 32))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BackboneConfig(image_size=24).validate()
        with pytest.raises(ConfigError):
            BackboneConfig(embedding_dim=4).validate()

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        net = init_params(Backbone(tiny_config()), seed=3).double()
        images = torch.rand(2, 1, 16, 16, dtype=torch.float64)

        def loss():
            return net(images).t_g.sum()

        failures = check_gradients(loss, list(net.named_parameters()), n_probes=5)
        assert not failures, failures


class TestInitParams:
    def test_same_seed_identical(self):
        a = init_params(Backbone(tiny_config()), seed=5)
        b = init_params(Backbone(tiny_config()), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = init_params(Backbone(tiny_config()), seed=5)
        b = init_params(Backbone(tiny_config()), seed=6)
        diff = max(
            float((pa - pb).abs().max()) for pa, pb in zip(a.parameters(), b.parameters())
        )
        assert diff > 0

    def test_fan_in_scaled_variance(self):
        config = BackboneConfig(channels=(8, 16, 32, 64), embedding_dim=32, image_size=64)
        net = init_params(Backbone(config), seed=7)
        w = net.conv4.weight  # 64x32x3x3 = 18432 weights
        assert w.numel() >= 10_000
        fan_in = w[0].numel()
        observed = float(w.var())
        assert abs(observed - 2.0 / fan_in) <= 0.2 * (2.0 / fan_in)

    def test_biases_start_at_zero(self):
        net = init_params(Backbone(tiny_config()), seed=2)
        assert float(net.conv1.bias.abs().max()) == 0.0


class TestAttention:
    def _setup(self, seed=0, batch=2, c=8, d=8, hw=4):
        torch.manual_seed(seed)
        head = init_params(MaskHead(d, c), seed=seed)
        t_g = torch.randn(batch, d)
        fmap = torch.rand(batch, c, hw, hw)
        return head, t_g, fmap

    def test_zero_head_gives_half_mask_level3(self):
        head, t_g, fmap = self._setup()
        with torch.no_grad():
            head.reduce2.weight.zero_()
            head.reduce2.bias.zero_()
        a3, t_l3 = attend_level3(t_g, fmap, head)
        assert torch.allclose(a3, torch.full_like(a3, 0.5))
        assert torch.allclose(t_l3, 0.5 * fmap.mean(dim=(2, 3)), atol=1e-6)

    def test_zero_map_gives_zero_pool(self):
        head, t_g, fmap = self._setup()
        a3, t_l3 = attend_level3(t_g, torch.zeros_like(fmap), head)
        assert torch.allclose(t_l3, torch.zeros_like(t_l3))

    def test_zero_head_gives_half_complement_level2(self):
        head, t_g, fmap = self._setup(seed=1)
        with torch.no_grad():
            head.reduce2.weight.zero_()
            head.reduce2.bias.zero_()
        a2, t_l2 = attend_level2(t_g, fmap, head)
        assert torch.allclose(t_l2, 0.5 * fmap.mean(dim=(2, 3)), atol=1e-6)

    def test_saturated_mask_annihilates_complement(self):
        head, t_g, fmap = self._setup(seed=2)
        with torch.no_grad():
            head.reduce2.weight.zero_()
            head.reduce2.bias.fill_(40.0)  # pre-squash +40 -> mask ~= 1
        a2, t_l2 = attend_level2(t_g, fmap, head)
        bound = 1e-12 * float(fmap.abs().max())
        assert float(t_l2.abs().max()) <= max(bound, 1e-12)

    def test_masks_live_in_open_unit_interval(self):
        head, t_g, fmap = self._setup(seed=3)
        a3, _ = attend_level3(t_g, fmap * 100, head)
        assert float(a3.min()) > 0.0 and float(a3.max()) < 1.0

    def test_aggregate_matches_naive_matvec(self):
        torch.manual_seed(4)
        fuse = torch.nn.Linear(8 + 4 + 6, 8)
        t_g, t_l2, t_l3 = torch.randn(1, 8), torch.randn(1, 4), torch.randn(1, 6)
        got = aggregate(t_g, t_l2, t_l3, fuse)[0]
        vec = torch.cat([t_g, t_l2, t_l3], dim=1)[0].tolist()
        expected = matvec_oracle(fuse.weight.tolist(), vec, fuse.bias.tolist())
        assert np.allclose(got.detach().numpy(), expected, atol=1e-6)

    def test_identity_fusion_passes_global_through(self):
        fuse = torch.nn.Linear(8 + 4 + 4, 8)
        with torch.no_grad():
            fuse.weight.zero_()
            fuse.weight[:, :8] = torch.eye(8)
            fuse.bias.zero_()
        t_g = torch.randn(2, 8)
        out = aggregate(t_g, torch.randn(2, 4), torch.randn(2, 4), fuse)
        assert torch.allclose(out, t_g)

    def test_zeroed_heads_reduce_to_global_pipeline(self):
        # regression anchor: zero attention heads make the template a linear
        # map of (t_g, 0.5*channel means of B2, 0.5*channel means of B3)
        model = init_params(OreoModel(tiny_config(), 5, 3), seed=9)
        with torch.no_grad():
            for head in (model.attention.head2, model.attention.head3):
                head.reduce2.weight.zero_()
                head.reduce2.bias.zero_()
        images = torch.rand(2, 1, 16, 16)
        maps, bundle = model(images)
        expected = model.attention.fuse(
            torch.cat(
                [maps.t_g, 0.5 * maps.b2.mean(dim=(2, 3)), 0.5 * maps.b3.mean(dim=(2, 3))],
                dim=1,
            )
        )
        assert torch.allclose(bundle.t, expected, atol=1e-6)

    def test_head_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        model = init_params(OreoModel(tiny_config(), 5, 3), seed=11).double()
        images = torch.rand(2, 1, 16, 16, dtype=torch.float64)

        def loss():
            _, bundle = model(images)
            return (bundle.t_l3**2).sum() + (bundle.t_l2**2).sum()

        params = [
            (n, p)
            for n, p in model.named_parameters()
            if n.startswith("attention.head")
        ]
        failures = check_gradients(loss, params, n_probes=5)
        assert not failures, failures


class TestRenderAttention:
    def test_constant_half_renders_128(self):
        raster = render_attention_raster(np.full((3, 3), 0.5), 8)
        assert raster.shape == (8, 8)
        assert (raster == 128).all()

    def test_hand_checked_bilinear_upsample(self):
        mask = [[0.0, 1.0], [0.0, 1.0]]
        up = bilinear_upsample(np.array(mask), 4)
        expected = bilinear_oracle(mask, 4, 4)
        assert np.allclose(up, expected)
        raster = render_attention_raster(np.array(mask), 4)
        assert np.array_equal(raster[0], [0, 85, 170, 255])
        # left column darkest, right column saturated, rows monotone
        assert (raster[:, 0] == 0).all() and (raster[:, -1] == 255).all()
        assert all((np.diff(row.astype(int)) >= 0).all() for row in raster)

    def test_normalization_stretches_to_full_range(self):
        mask = np.array([[0.4, 0.5], [0.45, 0.6]])
        raster = render_attention_raster(mask, 2, normalize=True)
        assert raster.min() == 0 and raster.max() == 255

    def test_random_upsample_matches_oracle(self):
        rng = np.random.default_rng(0)
        mask = rng.random((5, 7))
        up = bilinear_upsample(mask, (11, 13))
        expected = bilinear_oracle(mask.tolist(), 11, 13)
        assert np.allclose(up, expected)
