import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfhn import layers
from lfhn.layers import ConvParams, LrnParams

from oracles import naive_conv, naive_maxpool, lrn_scalar, fd_grad, max_rel_err

rng = np.random.default_rng


# ---------------------------------------------------------------- conv

def test_conv_full_scale_output_shape():
    x = rng(0).uniform(size=(1, 227, 227, 3))
    p = ConvParams(rng(1).normal(size=(11, 11, 3, 96)) * 0.01, np.zeros(96), stride=4)
    out = layers.conv_forward(x, p)
    assert out.shape == (1, 55, 55, 96)


def test_conv_identity_kernel():
    x = rng(2).uniform(size=(2, 4, 4, 3))
    kernel = np.eye(3).reshape(1, 1, 3, 3)
    out = layers.conv_forward(x, ConvParams(kernel, np.zeros(3)))
    assert np.array_equal(out, x)


def test_conv_matches_naive_oracle():
    r = rng(3)
    x = r.normal(size=(2, 5, 5, 2))
    kernel = r.normal(size=(3, 3, 2, 4))
    bias = r.normal(size=4)
    got = layers.conv_forward(x, ConvParams(kernel, bias, stride=1, pad=0))
    want = naive_conv(x, kernel, bias, 1, 0)
    assert max_rel_err(got, want) < 1e-10


def test_conv_channel_mismatch():
    p = ConvParams(np.zeros((3, 3, 4, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="channels"):
        layers.conv_forward(np.zeros((1, 5, 5, 3)), p)


def test_conv_params_invariants():
    with pytest.raises(ValueError, match="bias"):
        ConvParams(np.zeros((1, 1, 2, 3)), np.zeros(2))
    with pytest.raises(ValueError, match="stride"):
        ConvParams(np.zeros((1, 1, 2, 3)), np.zeros(3), stride=0)


def test_conv_backward_zero_grad():
    r = rng(4)
    x = r.normal(size=(1, 4, 4, 2))
    p = ConvParams(r.normal(size=(2, 2, 2, 3)), r.normal(size=3))
    gi, gk, gb = layers.conv_backward(x, p, np.zeros((1, 3, 3, 3)))
    assert not gi.any() and not gk.any() and not gb.any()


def test_conv_backward_one_hot_grad_copies_patch():
    r = rng(5)
    x = r.normal(size=(1, 4, 4, 2))
    p = ConvParams(r.normal(size=(2, 2, 2, 1)), np.zeros(1))
    grad_out = np.zeros((1, 3, 3, 1))
    grad_out[0, 1, 2, 0] = 1.0
    _, gk, gb = layers.conv_backward(x, p, grad_out)
    assert np.array_equal(gk[:, :, :, 0], x[0, 1:3, 2:4, :])
    assert gb[0] == 1.0


def test_conv_backward_matches_finite_differences():
    r = rng(6)
    x = r.normal(size=(2, 5, 5, 2))
    kernel = r.normal(size=(3, 3, 2, 3))
    bias = r.normal(size=3)
    probe = r.normal(size=(2, 3, 3, 3))  # random loss direction

    def loss_from(x_=None, k_=None, b_=None):
        p = ConvParams(kernel if k_ is None else k_, bias if b_ is None else b_,
                       stride=2, pad=1)
        return float((layers.conv_forward(x if x_ is None else x_, p) * probe).sum())

    p = ConvParams(kernel, bias, stride=2, pad=1)
    gi, gk, gb = layers.conv_backward(x, p, probe)
    assert max_rel_err(gi, fd_grad(lambda v: loss_from(x_=v), x.copy())) < 1e-6
    assert max_rel_err(gk, fd_grad(lambda v: loss_from(k_=v), kernel.copy())) < 1e-6
    assert max_rel_err(gb, fd_grad(lambda v: loss_from(b_=v), bias.copy())) < 1e-6


def test_conv_backward_shape_mismatch():
    p = ConvParams(np.zeros((2, 2, 2, 3)), np.zeros(3))
    with pytest.raises(ValueError, match="grad_out"):
        layers.conv_backward(np.zeros((1, 4, 4, 2)), p, np.zeros((1, 2, 2, 3)))


# ---------------------------------------------------------------- conv1x1

def test_conv1x1_stream_dims():
    x = rng(7).uniform(size=(1, 27, 27, 96))
    p = ConvParams(rng(8).normal(size=(1, 1, 96, 200)) * 0.05, np.zeros(200))
    assert layers.conv1x1_forward(x, p).shape == (1, 27, 27, 200)


def test_conv1x1_mixer_dims():
    x = rng(9).uniform(size=(1, 27, 27, 700))
    p = ConvParams(rng(10).normal(size=(1, 1, 700, 500)) * 0.02, np.zeros(500))
    assert layers.conv1x1_forward(x, p).shape == (1, 27, 27, 500)


def test_conv1x1_bit_identical_to_general_conv():
    r = rng(11)
    x = r.normal(size=(2, 4, 4, 3))
    p = ConvParams(r.normal(size=(1, 1, 3, 2)), r.normal(size=2))
    fast = layers.conv1x1_forward(x, p)
    general = layers.conv_forward(x, p)
    assert np.array_equal(fast, general)


def test_conv1x1_rejects_larger_kernels():
    p = ConvParams(np.zeros((3, 3, 2, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="1x1"):
        layers.conv1x1_forward(np.zeros((1, 4, 4, 2)), p)


# ---------------------------------------------------------------- relu

def test_relu_values():
    assert np.array_equal(layers.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_relu_all_negative():
    x = -rng(12).uniform(0.5, 1.0, size=(2, 3, 3, 2))
    assert not layers.relu(x).any()
    assert not layers.relu_backward(x, np.ones_like(x)).any()


def test_relu_backward_matches_finite_differences_away_from_kink():
    r = rng(13)
    x = r.normal(size=(2, 3, 3, 2))
    x[np.abs(x) < 1e-4] = 0.5  # keep the check clear of the kink
    probe = r.normal(size=x.shape)
    grad = layers.relu_backward(x, probe)
    numeric = fd_grad(lambda v: float((layers.relu(v) * probe).sum()), x.copy())
    assert max_rel_err(grad, numeric) < 1e-6


def test_relu_subgradient_zero_at_zero():
    g = layers.relu_backward(np.array([0.0]), np.array([5.0]))
    assert g[0] == 0.0


# ---------------------------------------------------------------- maxpool

def test_maxpool_full_scale_dims():
    x = rng(14).uniform(size=(1, 55, 55, 96))
    out, _ = layers.maxpool_forward(x)
    assert out.shape == (1, 27, 27, 96)


def test_maxpool_constant_input():
    x = np.full((1, 5, 5, 2), 3.25)
    out, _ = layers.maxpool_forward(x)
    assert np.all(out == 3.25)


def test_maxpool_matches_window_enumeration():
    x = rng(15).normal(size=(2, 7, 7, 2))
    out, index_map = layers.maxpool_forward(x)
    assert np.array_equal(out, naive_maxpool(x, 3, 2))
    # every recorded winner lies inside its own window
    n, ho, wo, c = index_map.indices.shape
    for b in range(n):
        for y in range(ho):
            for xo in range(wo):
                for ch in range(c):
                    flat = index_map.indices[b, y, xo, ch]
                    row, col = divmod(int(flat), 7)
                    assert y * 2 <= row < y * 2 + 3
                    assert xo * 2 <= col < xo * 2 + 3


def test_maxpool_tie_breaks_to_lowest_flat_index():
    x = np.zeros((1, 3, 3, 1))
    _, index_map = layers.maxpool_forward(x)
    assert index_map.indices[0, 0, 0, 0] == 0


def test_maxpool_too_small_errors():
    with pytest.raises(ValueError):
        layers.maxpool_forward(np.zeros((1, 2, 2, 1)))


def test_maxpool_backward_non_overlapping_ones():
    x = rng(16).normal(size=(1, 9, 9, 1))
    out, index_map = layers.maxpool_forward(x, window=3, stride=3)
    grad_in = layers.maxpool_backward(index_map, np.ones_like(out))
    assert grad_in.sum() == out.size
    assert ((grad_in == 0) | (grad_in == 1)).all()
    for y in range(3):
        for xo in range(3):
            assert grad_in[0, y * 3:y * 3 + 3, xo * 3:xo * 3 + 3, 0].sum() == 1.0


def test_maxpool_backward_zeros_and_stale_map():
    x = rng(17).normal(size=(1, 5, 5, 2))
    out, index_map = layers.maxpool_forward(x)
    assert not layers.maxpool_backward(index_map, np.zeros_like(out)).any()
    with pytest.raises(ValueError, match="stale|match"):
        layers.maxpool_backward(index_map, np.zeros((1, 3, 3, 2)))


def test_maxpool_backward_matches_finite_differences():
    r = rng(18)
    x = r.normal(size=(1, 5, 5, 2))
    out, index_map = layers.maxpool_forward(x)
    # regenerate until every window has a clear gap between max and runner-up
    probe = r.normal(size=out.shape)
    grad = layers.maxpool_backward(index_map, probe)
    numeric = fd_grad(lambda v: float((layers.maxpool_forward(v)[0] * probe).sum()),
                      x.copy())
    assert max_rel_err(grad, numeric) < 1e-6


# ---------------------------------------------------------------- lrn

def test_lrn_zero_input():
    p = LrnParams()
    assert not layers.lrn_forward(np.zeros((1, 2, 2, 8)), p).any()


def test_lrn_constant_channels_against_scalar_oracle():
    p = LrnParams(size=5, k=2.0, alpha=1e-4, beta=0.75)
    x = np.full((1, 1, 1, 96), 2.0)
    out = layers.lrn_forward(x, p)
    want = lrn_scalar(x, 5, 2.0, 1e-4, 0.75)
    assert max_rel_err(out, want) < 1e-12
    # interior channels see the full 5-channel window: sum of squares is 20
    interior = 2.0 / (2.0 + (1e-4 / 5) * 20.0) ** 0.75
    assert abs(out[0, 0, 0, 48] - interior) < 1e-12
    assert out[0, 0, 0, 0] > out[0, 0, 0, 48]  # truncated edge window divides less


def test_lrn_alpha_zero_k_one_is_identity():
    x = rng(19).normal(size=(2, 3, 3, 6))
    out = layers.lrn_forward(x, LrnParams(size=5, k=1.0, alpha=0.0, beta=0.9))
    assert np.array_equal(out, x)


def test_lrn_random_matches_scalar_oracle():
    x = rng(20).normal(size=(2, 3, 4, 7))
    p = LrnParams(size=4, k=1.5, alpha=0.3, beta=0.6)
    assert max_rel_err(layers.lrn_forward(x, p),
                       lrn_scalar(x, 4, 1.5, 0.3, 0.6)) < 1e-12


def test_lrn_never_amplifies_when_k_at_least_one():
    x = rng(21).normal(size=(2, 3, 3, 8)) * 3
    out = layers.lrn_forward(x, LrnParams(size=5, k=1.0, alpha=2.0, beta=0.75))
    assert (np.abs(out) <= np.abs(x) + 1e-15).all()


def test_lrn_backward_alpha_zero():
    x = rng(22).normal(size=(1, 2, 2, 5))
    g = rng(23).normal(size=x.shape)
    p = LrnParams(size=3, k=2.0, alpha=0.0, beta=0.75)
    assert max_rel_err(layers.lrn_backward(x, p, g), g / 2.0 ** 0.75) < 1e-15


def test_lrn_backward_zero_grad():
    x = rng(24).normal(size=(1, 2, 2, 5))
    assert not layers.lrn_backward(x, LrnParams(), np.zeros_like(x)).any()


def test_lrn_backward_matches_finite_differences():
    r = rng(25)
    x = r.normal(size=(1, 2, 2, 8))
    probe = r.normal(size=x.shape)
    p = LrnParams(size=5, k=2.0, alpha=0.5, beta=0.75)
    grad = layers.lrn_backward(x, p, probe)
    numeric = fd_grad(lambda v: float((layers.lrn_forward(v, p) * probe).sum()), x.copy())
    assert max_rel_err(grad, numeric) < 1e-6


def test_lrn_params_invariants():
    with pytest.raises(ValueError):
        LrnParams(size=0)
    with pytest.raises(ValueError):
        LrnParams(k=0.0)
    with pytest.raises(ValueError):
        LrnParams(beta=0.0)


# ---------------------------------------------------------------- concat / split

def test_concat_stream_dims():
    a = rng(26).uniform(size=(1, 27, 27, 400))
    b = rng(27).uniform(size=(1, 27, 27, 300))
    out = layers.concat_channels([a, b])
    assert out.shape == (1, 27, 27, 700)
    assert np.array_equal(out[..., :400], a)
    assert np.array_equal(out[..., 400:], b)


def test_concat_single_input_is_identity():
    a = rng(28).uniform(size=(1, 3, 3, 4))
    assert np.array_equal(layers.concat_channels([a]), a)


def test_split_inverts_concat():
    r = rng(29)
    a, b = r.normal(size=(2, 3, 4, 5)), r.normal(size=(2, 3, 4, 2))
    sa, sb = layers.split_channels(layers.concat_channels([a, b]), [5, 2])
    assert np.array_equal(sa, a) and np.array_equal(sb, b)


def test_concat_spatial_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        layers.concat_channels([np.zeros((1, 3, 3, 2)), np.zeros((1, 4, 3, 2))])


# ---------------------------------------------------------------- fc

def test_fc_identity_weight():
    x = rng(30).normal(size=(3, 4))
    assert np.array_equal(layers.fc_forward(x, np.eye(4), np.zeros(4)), x)


def test_fc_zero_input_returns_bias():
    b = rng(31).normal(size=5)
    assert np.array_equal(layers.fc_forward(np.zeros((2, 3)), np.zeros((3, 5)), b),
                          np.tile(b, (2, 1)))


def test_fc_backward_matches_finite_differences():
    r = rng(32)
    x = r.normal(size=(3, 4))
    weight = r.normal(size=(4, 5))
    bias = r.normal(size=5)
    probe = r.normal(size=(3, 5))

    gi, gw, gb = layers.fc_backward(x, weight, probe)
    assert max_rel_err(gi, fd_grad(
        lambda v: float((layers.fc_forward(v, weight, bias) * probe).sum()),
        x.copy())) < 1e-7
    assert max_rel_err(gw, fd_grad(
        lambda v: float((layers.fc_forward(x, v, bias) * probe).sum()),
        weight.copy())) < 1e-7
    assert max_rel_err(gb, fd_grad(
        lambda v: float((layers.fc_forward(x, weight, v) * probe).sum()),
        bias.copy())) < 1e-7


def test_fc_dimension_mismatch():
    with pytest.raises(ValueError):
        layers.fc_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))


# ---------------------------------------------------------------- softmax

def test_softmax_xent_uniform_logits():
    loss, grad = layers.softmax_xent(np.zeros((1, 4)), [2])
    assert abs(loss - np.log(4.0)) < 1e-12
    want = np.full(4, 0.25)
    want[2] -= 1.0
    assert np.allclose(grad[0], want, atol=1e-12)


def test_softmax_xent_extreme_logits_stable():
    loss, grad = layers.softmax_xent(np.array([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss) and loss < 1e-12
    assert np.isfinite(grad).all()


def test_softmax_xent_loss_matches_finite_differences():
    r = rng(33)
    logits = r.normal(size=(1, 10))
    label = [int(r.integers(0, 10))]
    _, grad = layers.softmax_xent(logits, label)
    numeric = fd_grad(lambda v: layers.softmax_xent(v, label)[0], logits.copy())
    assert np.abs(grad - numeric).max() < 1e-8


def test_softmax_xent_batch_mean():
    r = rng(34)
    logits = r.normal(size=(4, 3))
    labels = np.array([0, 1, 2, 1])
    loss, grad = layers.softmax_xent(logits, labels)
    singles = [layers.softmax_xent(logits[i:i + 1], labels[i:i + 1]) for i in range(4)]
    assert abs(loss - np.mean([s[0] for s in singles])) < 1e-12
    assert np.allclose(grad, np.concatenate([s[1] for s in singles]) / 4.0, atol=1e-15)


def test_softmax_xent_label_out_of_range():
    with pytest.raises(ValueError, match="label"):
        layers.softmax_xent(np.zeros((1, 3)), [3])


@given(st.integers(0, 2 ** 31))
@settings(max_examples=50, deadline=None)
def test_softmax_probabilities_sum_to_one(seed):
    logits = np.random.default_rng(seed).normal(scale=10.0, size=(3, 7))
    probs = layers.softmax(logits)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-12
    loss, _ = layers.softmax_xent(logits, [0, 1, 2])
    assert loss >= 0.0
