import numpy as np
import pytest

from xdseg import tensor as T
from xdseg.gradcheck import gradcheck
from xdseg.network import (
    CheckpointError,
    ConvBlock,
    Discriminator,
    DiscriminatorConfig,
    NormSpec,
    UNet,
    UNetConfig,
    domain_histograms,
    load_checkpoint,
    response_histogram,
    save_checkpoint,
    sparsity_fraction,
    write_histograms_csv,
)
from xdseg.tensor import ShapeError, Tape, Tensor

TOL = 1e-4


def block(cin, cout, k, kind, ordering, seed=0, dtype=np.float64):
    return ConvBlock(cin, cout, k, NormSpec(kind, ordering), np.random.default_rng(seed), dtype)


def weighted_sum(out, seed):
    return T.sum(out * Tensor(np.random.default_rng(seed).uniform(-1, 1, out.shape)))


# ---- NormSpec ----------------------------------------------------------------------

def test_normspec_validation_and_labels():
    assert NormSpec().label == "Pre-BN"
    assert NormSpec("instance", "post").label == "Post-IN"
    with pytest.raises(ValueError, match="expected one of"):
        NormSpec("group", "pre")
    with pytest.raises(ValueError, match="expected one of"):
        NormSpec("batch", "middle")
    with pytest.raises(ValueError):
        NormSpec(epsilon=0.0)
    assert NormSpec.from_dict(NormSpec("instance", "post", 1e-3).to_dict()) == NormSpec("instance", "post", 1e-3)


# ---- conv block -----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["batch", "instance"])
def test_pre_block_constant_input_ignores_weight(kind):
    z = Tensor(np.full((2, 3, 4, 4), 1.7))
    outs = []
    for seed in range(3):
        b = block(3, 4, 3, kind, "pre", seed)
        b.bias.data = np.linspace(-1, 1, 4)
        outs.append(b(z).data)
    expected = np.where(np.linspace(-1, 1, 4) > 0, 1.0, 0.25) * np.linspace(-1, 1, 4)
    for o in outs:
        np.testing.assert_allclose(o, np.broadcast_to(expected[None, :, None, None], o.shape), atol=1e-12)


def test_post_block_hand_example():
    b = block(1, 1, 1, "batch", "post")
    b.weight.data = np.ones((1, 1, 1, 1))
    out = b(Tensor(np.array([-1.0, 1.0]).reshape(2, 1, 1, 1))).data.ravel()
    s = 1 / np.sqrt(1 + 1e-5)
    np.testing.assert_allclose(out, [-0.25 * s, s], rtol=1e-12)


def test_instance_block_has_no_cross_sample_coupling():
    b = block(3, 4, 3, "instance", "pre")
    x = np.random.default_rng(0).normal(size=(4, 3, 6, 6))
    perm = [2, 0, 3, 1]
    np.testing.assert_allclose(b(Tensor(x[perm])).data, b(Tensor(x)).data[perm], atol=1e-12)


def test_pre_block_equals_composed_primitives():
    for kind, axes in (("batch", (0, 2, 3)), ("instance", (2, 3))):
        b = block(3, 5, 3, kind, "pre")
        z = T.randn((2, 3, 8, 8), seed=1, dtype=np.float64)
        manual = T.prelu(T.conv2d(T.normalize(z, axes, 1e-5)[0], b.weight, b.bias, padding=1), b.slope)
        np.testing.assert_allclose(b(z).data, manual.data, atol=1e-6)


def test_batch_norm_stage_is_standardized():
    z = T.randn((4, 3, 8, 8), seed=2, dtype=np.float64) * 3.0 + 2.0
    out = T.normalize(z, (0, 2, 3), 1e-5)[0].data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)


def test_running_stats_and_eval_mode():
    b = block(2, 2, 3, "batch", "post")
    with pytest.raises(RuntimeError):
        b(T.randn((2, 2, 4, 4), seed=0, dtype=np.float64), "eval")
    x = T.randn((2, 2, 4, 4), seed=0, dtype=np.float64)
    b(x, "train")
    a = b.conv(x).data
    np.testing.assert_allclose(b.running_mean, 0.1 * a.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(b.running_var, 0.9 + 0.1 * a.var(axis=(0, 2, 3)), atol=1e-12)
    assert np.all(b.running_var > 0)
    ev = b(x, "eval").data
    assert ev.shape == (2, 2, 4, 4) and np.all(np.isfinite(ev))
    with pytest.raises(ValueError):
        b(x, "test")


def test_prelu_slope_limits():
    x = T.randn((2, 3, 4, 4), seed=3, dtype=np.float64)
    assert np.array_equal(T.prelu(x, Tensor(np.ones(3))).data, x.data)
    assert np.array_equal(T.prelu(x, Tensor(np.zeros(3))).data, np.maximum(x.data, 0))


def test_block_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        block(3, 4, 3, "batch", "pre")(T.zeros((1, 2, 4, 4), np.float64))


def test_he_init_scale():
    b = ConvBlock(16, 64, 3, NormSpec(), np.random.default_rng(0), np.float64)
    assert b.weight.data.std() == pytest.approx(np.sqrt(2 / (16 * 9)), rel=0.05)
    assert not b.bias.data.any() and np.all(b.slope.data == 0.25)


def _pre_activation(b, x):
    if b.norm.ordering.value == "post":
        return b._normalize(b.conv(x), "train").data
    return b.conv(b._normalize(x, "train")).data


def kink_free_input(b, shape, margin=1e-2):
    """Input whose PReLU arguments all sit ``margin`` away from 0.

    Central differences straddling the PReLU kink are not a gradient error.
    """
    for seed in range(200):
        x = Tensor(np.random.default_rng(seed).uniform(-1, 1, shape), requires_grad=True)
        if np.abs(_pre_activation(b, x)).min() > margin:
            return x
    raise AssertionError("no kink-free input found")


@pytest.mark.parametrize("kind", ["batch", "instance"])
@pytest.mark.parametrize("ordering", ["pre", "post"])
def test_gradcheck_conv_block(kind, ordering):
    b = block(3, 4, 3, kind, ordering, seed=5)
    x = kink_free_input(b, (2, 3, 4, 4))
    params = [x, b.weight, b.bias, b.slope]
    assert gradcheck(lambda: weighted_sum(b(x, "train"), 2), params) < TOL


# ---- U-Net -------------------------------------------------------------------------------

def test_unet_shape_contract():
    net = UNet(UNetConfig(in_channels=3, num_classes=3, levels=4), seed=0)
    assert net(T.randn((2, 3, 64, 64), seed=0)).shape == (2, 3, 64, 64)


def test_unet_rejects_indivisible_extent():
    net = UNet(UNetConfig(levels=4))
    with pytest.raises(ShapeError, match="divisible by 16"):
        net(T.zeros((1, 3, 50, 48)))


def test_unet_config_validation():
    with pytest.raises(ValueError):
        UNetConfig(levels=0)
    with pytest.raises(ValueError):
        UNetConfig(num_classes=1)
    with pytest.raises(ValueError):
        UNetConfig(in_channels=2)


@pytest.mark.parametrize("level", [0, 1])
def test_unet_skips_are_live(level):
    net = UNet(UNetConfig(levels=2, base_channels=8), seed=0)
    x = T.randn((2, 3, 16, 16), seed=1)
    base = net(x, "train").data
    cut = net(x, "train", skip_scale={level: 0.0}).data
    assert np.abs(base - cut).max() > 1e-4


@pytest.mark.parametrize("kind", ["batch", "instance"])
def test_unet_gradient_reaches_every_parameter(kind):
    net = UNet(UNetConfig(levels=2, base_channels=4, norm=NormSpec(kind, "pre")), seed=0, dtype=np.float64)
    x = T.randn((2, 3, 8, 8), seed=1, dtype=np.float64)
    tape = Tape()
    with tape:
        loss = weighted_sum(net(x), 3)
    tape.backward(loss)
    dead = [n for n, p in net.parameters().items() if not np.any(p.grad)]
    assert dead == []


def test_unet_forward_takes_no_domain_argument():
    import inspect

    params = inspect.signature(UNet.forward).parameters
    assert not any("domain" in p or "tag" in p for p in params)


# ---- discriminator ---------------------------------------------------------------------------

def test_discriminator_range_and_channels():
    cfg = DiscriminatorConfig.for_unet(UNetConfig(in_channels=3, num_classes=3))
    assert cfg.in_channels == 6
    disc = Discriminator(cfg, seed=0)
    x, y = T.randn((3, 3, 16, 16), seed=0) * 50.0, T.randn((3, 3, 16, 16), seed=1)
    s = disc(x, y).data
    assert s.shape == (3, 1) and np.all((s > 0) & (s < 1))
    with pytest.raises(ShapeError):
        disc(x, T.zeros((3, 2, 16, 16)))
    with pytest.raises(ShapeError):
        disc(x, T.zeros((3, 3, 8, 8)))


def test_discriminator_duplicate_sample_duplicate_score():
    disc = Discriminator(DiscriminatorConfig(in_channels=5), seed=0)
    x, y = T.randn((1, 3, 16, 16), seed=0), T.randn((1, 2, 16, 16), seed=1)
    xx, yy = Tensor(np.concatenate([x.data, x.data])), Tensor(np.concatenate([y.data, y.data]))
    s = disc(xx, yy).data
    assert s[0, 0] == s[1, 0]


def _disc_margin(disc, x, y):
    """Smallest distance of any PReLU argument from 0 or any max-pool top-2 gap."""
    h = T.concat_channels(x, y)
    margin = np.inf
    for i in range(len(disc.config.widths)):
        b = disc.modules[f"stage{i}"]
        margin = min(margin, np.abs(_pre_activation(b, h)).min())
        a = b(h).data
        B, C, H, W = a.shape
        win = np.sort(a.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4), axis=1)
        margin = min(margin, (win[:, -1] - win[:, -2]).min())
        h = T.downsample2(b(h))
    return margin


def test_gradcheck_discriminator_head():
    cfg = DiscriminatorConfig(in_channels=3, widths=(4, 4))
    disc = Discriminator(cfg, seed=0, dtype=np.float64)
    for seed in range(500):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-1, 1, (1, 1, 8, 8)))
        y = Tensor(rng.uniform(0, 1, (1, 2, 8, 8)), requires_grad=True)
        # a weight step of h moves activations by at most ~3h
        if _disc_margin(disc, x, y) > 5e-3:
            break
    else:
        raise AssertionError("no kink-free input found")
    params = [y] + list(disc.parameters().values())
    assert gradcheck(lambda: weighted_sum(disc(x, y), 1), params) < TOL


# ---- diagnostics ------------------------------------------------------------------------------

def test_sparsity_fraction_examples():
    assert sparsity_fraction(np.ones((2, 3))) == 1.0
    assert sparsity_fraction(np.array([1.0, 0.0, -1.0, 2.0])) == 0.5
    assert sparsity_fraction(np.zeros(7)) == 0.0
    with pytest.raises(ValueError):
        sparsity_fraction(np.zeros(0))


def test_histogram_constant_and_conservation():
    a = np.full((2, 3, 4, 4), 0.3)
    h = response_histogram(a, "ct", 1, bins=8)
    assert np.count_nonzero(h.counts) == 1 and h.counts.sum() == 32
    r = np.random.default_rng(0).normal(size=(5, 4, 6, 6))
    assert response_histogram(r, "mr", 2, bins=10).counts.sum() == 5 * 36
    with pytest.raises(ValueError):
        response_histogram(r, "mr", 2, bins=1)
    with pytest.raises(ValueError):
        response_histogram(r, "mr", 4)


def test_domain_histograms_share_edges(tmp_path):
    lo = np.random.default_rng(0).uniform(0, 1, (2, 1, 4, 4))
    hi = np.random.default_rng(1).uniform(5, 6, (2, 1, 4, 4))
    h_ct, h_mr = domain_histograms({"ct": lo, "mr": hi}, 0, bins=12)
    assert np.array_equal(h_ct.edges, h_mr.edges)
    assert not np.any((h_ct.counts > 0) & (h_mr.counts > 0))
    assert h_ct.counts.sum() == h_mr.counts.sum() == 32
    path = tmp_path / "h.csv"
    write_histograms_csv(path, [h_ct, h_mr])
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,kernel_index,domain,bin_lo,bin_hi,count" and len(lines) == 25


# ---- checkpoint ------------------------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = UNet(UNetConfig(levels=2, base_channels=4, norm=NormSpec("batch", "post")), seed=3)
    net(T.randn((2, 3, 8, 8), seed=0), "train")
    path = tmp_path / "u.ckpt"
    save_checkpoint(path, net, {"iteration": 7})
    back, extra = load_checkpoint(path)
    assert extra == {"iteration": 7}
    assert back.config == net.config
    for name, p in net.parameters().items():
        assert back.parameters()[name].data.tobytes() == p.data.tobytes()
    for name, b in net.buffers().items():
        assert back.buffers()[name].tobytes() == b.tobytes()
    x = T.randn((1, 3, 8, 8), seed=5)
    assert back(x, "eval").data.tobytes() == net(x, "eval").data.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", back, {"iteration": 7})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    net = Discriminator(DiscriminatorConfig(), seed=0)
    good = tmp_path / "d.ckpt"
    save_checkpoint(good, net)
    good.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(good)
