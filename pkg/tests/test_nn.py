import numpy as np
import pytest

from rotdcf import arch as A
from rotdcf.basis import build_angular_basis, build_fb_basis, steering_matrix, synthesize_filter
from rotdcf.filters import FilterCoeffs, synthesize_bank
from rotdcf.layers import (
    AvgPoolLayer,
    GroupNormLayer,
    JointConv,
    LiftConv,
    MaxPoolLayer,
    PlainConv,
    ReluLayer,
    softmax_cross_entropy,
)
from rotdcf.network import Network, circular_align

RNG = np.random.default_rng


def naive_joint_forward(x, coeffs, spatial, angular, n_theta):
    """Literal double integral of the joint convolution, via the full bank."""
    bank = synthesize_bank(coeffs, spatial, angular, n_theta).w  # (C,M,S,B,L,L)
    b, c, s_in, h, w = x.shape
    l = bank.shape[-1]
    r = (l - 1) // 2
    h2 = (2.0 / (l - 1)) ** 2
    xp = np.zeros((b, c, s_in, h + 2 * r, w + 2 * r))
    xp[..., r : r + h, r : r + w] = x
    m_out = bank.shape[1]
    out = np.zeros((b, m_out, n_theta, h, w))
    for s in range(n_theta):
        for sp in range(n_theta):
            beta = (sp - s) % n_theta
            for i in range(h):
                for j in range(w):
                    patch = xp[:, :, sp, i : i + l, j : j + l]
                    out[:, :, s, i, j] += np.einsum(
                        "bcxy,cmxy->bm", patch, bank[:, :, s, beta]
                    )
    out *= h2 / n_theta
    return out + coeffs.bias[None, :, None, None, None]


def fd_check_layer(layer, x, n_probe=12, step=1e-6, seed=0):
    """Central finite differences on a scalar functional of the output."""
    rng = RNG(seed)
    probe = rng.standard_normal(layer.forward(x).shape)

    def f():
        return float((layer.forward(x) * probe).sum())

    layer.zero_grads()
    layer.forward(x)
    gx = layer.backward(probe)

    worst = 0.0
    for name, p in layer.params.items():
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            f_plus = f()
            flat[i] = keep - step
            f_minus = f()
            flat[i] = keep
            num = (f_plus - f_minus) / (2 * step)
            ana = layer.grads[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    # input gradient
    flat = x.reshape(-1)
    idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
    for i in idx:
        keep = flat[i]
        flat[i] = keep + step
        f_plus = f()
        flat[i] = keep - step
        f_minus = f()
        flat[i] = keep
        num = (f_plus - f_minus) / (2 * step)
        ana = gx.reshape(-1)[i]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    return worst


# ------------------------------------------------------------------ lift


def test_lift_zero_input_gives_bias():
    layer = LiftConv(1, 3, 3, 5, 8, RNG(0))
    layer.params["bias"][:] = [0.5, -1.0, 2.0]
    out = layer.forward(np.zeros((2, 1, 9, 9)))
    assert out.shape == (2, 3, 8, 9, 9)
    for m, b in enumerate([0.5, -1.0, 2.0]):
        assert np.allclose(out[:, m], b)


def test_lift_delta_reproduces_steered_basis():
    size, n_theta, k = 5, 8, 6
    basis = build_fb_basis(size, k)
    h2 = basis.grid.spacing**2
    for k0 in (0, 1, 4):
        layer = LiftConv(1, 1, k, size, n_theta, RNG(0))
        layer.params["a"][:] = 0.0
        layer.params["a"][0, 0, k0] = 1.0
        layer.params["bias"][:] = 0.0
        x = np.zeros((1, 1, size, size))
        x[0, 0, size // 2, size // 2] = 1.0
        out = layer.forward(x)
        for s in range(n_theta):
            coeff = steering_matrix(basis, -2 * np.pi * s / n_theta)[:, k0]
            expect = h2 * synthesize_filter(basis, coeff)[::-1, ::-1]
            assert np.abs(out[0, 0, s] - expect).max() < 1e-13


def test_lift_output_shape():
    layer = LiftConv(2, 4, 3, 5, 6, RNG(1))
    out = layer.forward(RNG(2).standard_normal((3, 2, 11, 7)))
    assert out.shape == (3, 4, 6, 11, 7)


# ------------------------------------------------------------------ joint


def test_joint_matches_naive_oracle():
    rng = RNG(5)
    n_theta, k, k_alpha = 4, 3, 3
    spatial = build_fb_basis(5, k)
    angular = build_angular_basis(k_alpha, n_theta)
    layer = JointConv(2, 3, k, k_alpha, 5, n_theta, rng)
    layer.params["a"][:] = rng.standard_normal(layer.params["a"].shape)
    layer.params["bias"][:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, n_theta, 7, 7))
    fast = layer.forward(x)
    coeffs = FilterCoeffs("joint", layer.params["a"], layer.params["bias"])
    naive = naive_joint_forward(x, coeffs, spatial, angular, n_theta)
    err = np.abs(fast - naive).max() / np.abs(naive).max()
    assert err < 1e-10


def test_joint_additional_oracle_instances():
    rng = RNG(7)
    for trial in range(5):
        n_theta = int(rng.choice([2, 4, 8]))
        k = int(rng.choice([1, 3, 5]))
        k_alpha = int(rng.integers(1, n_theta + 1))
        spatial = build_fb_basis(5, k)
        angular = build_angular_basis(k_alpha, n_theta)
        m_in, m_out = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        layer = JointConv(m_in, m_out, k, k_alpha, 5, n_theta, rng)
        layer.params["a"][:] = rng.standard_normal(layer.params["a"].shape)
        layer.params["bias"][:] = rng.standard_normal(m_out)
        x = rng.standard_normal((1, m_in, n_theta, 6, 5))
        fast = layer.forward(x)
        coeffs = FilterCoeffs("joint", layer.params["a"], layer.params["bias"])
        naive = naive_joint_forward(x, coeffs, spatial, angular, n_theta)
        assert np.abs(fast - naive).max() / np.abs(naive).max() < 1e-10


def test_joint_constant_alpha_input_nonconstant_rows_give_bias():
    rng = RNG(8)
    n_theta = 8
    layer = JointConv(1, 2, 3, 5, 5, n_theta, rng)
    a = np.zeros(layer.params["a"].shape)
    a[..., 1:] = rng.standard_normal(a[..., 1:].shape)  # no constant angular row
    layer.params["a"][:] = a
    layer.params["bias"][:] = [0.7, -0.3]
    x = np.broadcast_to(
        rng.standard_normal((1, 1, 1, 9, 9)), (1, 1, n_theta, 9, 9)
    ).copy()
    out = layer.forward(x)
    assert np.allclose(out[:, 0], 0.7, atol=1e-12)
    assert np.allclose(out[:, 1], -0.3, atol=1e-12)


def test_joint_zero_input_gives_bias():
    layer = JointConv(2, 2, 3, 3, 5, 4, RNG(9))
    layer.params["bias"][:] = [1.5, -2.5]
    out = layer.forward(np.zeros((1, 2, 4, 6, 6)))
    assert np.allclose(out[:, 0], 1.5) and np.allclose(out[:, 1], -2.5)


# ------------------------------------------------------- pointwise / pooling


def test_relu_nonexpansive():
    rng = RNG(10)
    relu = ReluLayer()
    for _ in range(20):
        a, b = rng.standard_normal((2, 50))
        da = relu.forward(a.copy())
        db = relu.forward(b.copy())
        assert np.linalg.norm(da - db) <= np.linalg.norm(a - b) + 1e-12


def test_avgpool_constant_map():
    pool = AvgPoolLayer(2)
    out = pool.forward(np.full((1, 2, 3, 8, 8), 3.25))
    assert out.shape == (1, 2, 3, 4, 4)
    assert np.allclose(out, 3.25)


def test_pool_truncates_odd_sizes():
    pool = AvgPoolLayer(2)
    out = pool.forward(np.arange(49, dtype=float).reshape(1, 1, 7, 7))
    assert out.shape == (1, 1, 3, 3)


def test_groupnorm_moments():
    rng = RNG(11)
    gn = GroupNormLayer(3)
    x = rng.standard_normal((4, 3, 8, 5, 5)) * 2.7 + 1.1
    y = gn.forward(x)
    mean = y.mean(axis=(0, 2, 3, 4))
    var = y.var(axis=(0, 2, 3, 4))
    assert np.abs(mean).max() < 1e-12
    assert np.abs(var - 1.0).max() < 1e-4


def test_alpha_roll_commutes_with_pointwise_layers():
    rng = RNG(12)
    x = rng.standard_normal((2, 3, 8, 6, 6))
    for layer in (ReluLayer(), AvgPoolLayer(2), MaxPoolLayer(2), GroupNormLayer(3)):
        y_then_roll = np.roll(layer.forward(x), 3, axis=2)
        roll_then_y = layer.forward(np.roll(x, 3, axis=2))
        assert np.allclose(y_then_roll, roll_then_y, atol=1e-12)


# ------------------------------------------------------------------- head


def test_uniform_logits_loss_is_ln10():
    logits = np.zeros((7, 10))
    labels = np.arange(7) % 10
    loss, _ = softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(np.log(10.0), rel=1e-12)


def test_margin_drives_loss_to_zero():
    labels = np.zeros(4, dtype=int)
    last = None
    for margin in (1.0, 3.0, 9.0, 27.0):
        logits = np.zeros((4, 10))
        logits[:, 0] = margin
        loss, _ = softmax_cross_entropy(logits, labels)
        if last is not None:
            assert loss < last
        last = loss
    assert last < 1e-9


def test_batch_permutation_invariance():
    rng = RNG(13)
    logits = rng.standard_normal((16, 10))
    labels = rng.integers(0, 10, size=16)
    loss, _ = softmax_cross_entropy(logits, labels)
    perm = rng.permutation(16)
    loss_p, _ = softmax_cross_entropy(logits[perm], labels[perm])
    assert loss == pytest.approx(loss_p, rel=1e-14)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 10)), np.array([0, 10]))


# ------------------------------------------------------------- gradients


def test_lift_gradients():
    layer = LiftConv(2, 2, 3, 5, 4, RNG(20))
    x = RNG(21).standard_normal((2, 2, 7, 7))
    assert fd_check_layer(layer, x) < 1e-7


def test_joint_gradients():
    layer = JointConv(2, 2, 3, 3, 5, 4, RNG(22))
    x = RNG(23).standard_normal((2, 2, 4, 7, 7))
    assert fd_check_layer(layer, x) < 1e-7


def test_plainconv_gradients():
    layer = PlainConv(2, 3, 5, RNG(24))
    x = RNG(25).standard_normal((2, 2, 7, 7))
    assert fd_check_layer(layer, x) < 1e-7


def test_groupnorm_gradients():
    layer = GroupNormLayer(3)
    x = RNG(26).standard_normal((2, 3, 4, 5, 5))
    assert fd_check_layer(layer, x) < 1e-6


def test_pool_gradients():
    for layer in (AvgPoolLayer(2), MaxPoolLayer(2)):
        x = RNG(27).standard_normal((2, 2, 6, 6))
        assert fd_check_layer(layer, x) < 1e-7


def test_zero_upstream_gives_zero_grads():
    layer = JointConv(1, 2, 3, 3, 5, 4, RNG(28))
    x = RNG(29).standard_normal((1, 1, 4, 6, 6))
    layer.zero_grads()
    layer.forward(x)
    layer.backward(np.zeros((1, 2, 4, 6, 6)))
    assert np.all(layer.grads["a"] == 0.0)
    assert np.all(layer.grads["bias"] == 0.0)


def test_gradients_additive_over_batch():
    layer = LiftConv(1, 2, 3, 5, 4, RNG(30))
    x = RNG(31).standard_normal((2, 1, 6, 6))
    gy = RNG(32).standard_normal((2, 2, 4, 6, 6))
    layer.zero_grads()
    layer.forward(x)
    layer.backward(gy)
    g_both = layer.grads["a"].copy()
    layer.zero_grads()
    layer.forward(x[:1])
    layer.backward(gy[:1])
    layer.forward(x[1:])
    layer.backward(gy[1:])
    assert np.allclose(layer.grads["a"], g_both, atol=1e-12)


# ------------------------------------------------------------- network


def test_network_shapes_and_flatten_order():
    spec = A.conv3_rotdcf(m=2, k=3, k_alpha=3, n_theta=4, image_size=12)
    net = Network(spec, seed=0)
    x = RNG(33).standard_normal((2, 1, 12, 12))
    feats = net.features(x)
    assert feats[0][1].shape == (2, 2, 4, 12, 12)  # lift
    logits = net.forward(x)
    assert logits.shape == (2, 10)
    # flatten is channel-outer, rotation-middle, pixels-inner
    last_map = feats[-1][1]
    flat = last_map.reshape(2, -1)
    m, s = last_map.shape[1], last_map.shape[2]
    hw = last_map.shape[3] * last_map.shape[4]
    assert np.array_equal(flat[:, :hw], last_map[:, 0, 0].reshape(2, -1))
    assert np.array_equal(flat[:, hw : 2 * hw], last_map[:, 0, 1].reshape(2, -1))


def test_network_margins_conv3():
    spec = A.conv3_rotdcf(m=2, k=3, k_alpha=3, n_theta=4, image_size=28)
    net = Network(spec, seed=0)
    margins = {s.name: s.margin for s in net.stages}
    assert margins["lift0"] == 2
    assert margins["avgpool2"] == 1
    assert margins["joint3"] == 3
    assert margins["avgpool5"] == 2
    assert margins["joint6"] == 4
    scales = [s.scale for s in net.conv_stages()]
    assert scales == [2.0, 4.0, 8.0]


def test_zero_input_response_interior_constancy():
    spec = A.conv3_rotdcf(m=2, k=3, k_alpha=3, n_theta=4, image_size=28)
    net = Network(spec, seed=3)
    for stage in net.conv_stages():
        stage.layer.params["bias"][:] = RNG(4).standard_normal(
            stage.layer.params["bias"].shape
        )
    records = net.zero_input_response()
    for stage, out, const, std in records:
        if const is not None:
            assert std < 1e-10
    # first layer: x0 = relu(bias) per channel
    lift_bias = net.conv_stages()[0].layer.params["bias"]
    relu_rec = [r for r in records if r[0].name.startswith("relu")][0]
    assert np.allclose(relu_rec[2], np.maximum(lift_bias, 0.0), atol=1e-12)


def test_zero_input_zero_bias_all_zero():
    spec = A.conv3_rotdcf(m=2, k=3, k_alpha=3, n_theta=4, image_size=20)
    net = Network(spec, seed=5)
    for _, out, const, _ in net.zero_input_response():
        assert np.allclose(out, 0.0)


def test_circular_align_identity_and_roll():
    rng = RNG(40)
    f = rng.standard_normal((8, 3, 5, 5))
    f[2] += 20.0  # make index 2 dominant
    aligned, shift = circular_align(f, axis=0)
    assert shift == 2
    aligned2, shift2 = circular_align(aligned, axis=0)
    assert shift2 == 0
    assert np.array_equal(aligned2, aligned)
    rolled = np.roll(aligned, 5, axis=0)
    re_aligned, shift3 = circular_align(rolled, axis=0)
    assert shift3 == 5
    assert np.array_equal(re_aligned, aligned)


def test_network_loss_gradients_end_to_end():
    spec = A.ArchSpec(
        layers=(
            A.Lift(5, 2, 3), A.Relu(), A.AvgPool(2),
            A.Joint(5, 2, 3, 3), A.GroupNorm(), A.Relu(), A.MaxPool(2),
            A.Flatten(), A.Dense(8), A.Relu(), A.Dense(4), A.SoftmaxLoss(),
        ),
        n_theta=4,
        in_channels=1,
        image_size=9,
    )
    net = Network(spec, seed=7)
    rng = RNG(8)
    x = rng.standard_normal((3, 1, 9, 9))
    labels = np.array([0, 2, 3])
    net.zero_grads()
    loss0 = net.loss_and_grad(x, labels)
    assert np.isfinite(loss0)
    step = 1e-6
    worst = 0.0
    grads = dict(net.named_grads())
    for name, p in list(net.named_params()):
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            keep = flat[i]
            flat[i] = keep + step
            fp = _loss_only(net, x, labels)
            flat[i] = keep - step
            fm = _loss_only(net, x, labels)
            flat[i] = keep
            d_plus = (fp - loss0) / step
            d_minus = (loss0 - fm) / step
            if abs(d_plus - d_minus) > 1e-3 * max(abs(d_plus), abs(d_minus), 1e-8):
                continue  # a ReLU kink or pooling argmax flip sits inside the stencil
            num = (fp - fm) / (2 * step)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    assert worst < 1e-5


def _loss_only(net, x, labels):
    logits = net.forward(x)
    loss, _ = softmax_cross_entropy(logits, labels)
    return loss
