"""Tests for the convolutional embedding network.

Gradients are the critical surface here: every layer type (plain
convolution, instance normalization, leaky-ReLU) and the full stack are
checked against central finite differences computed in this file, in
float64 for exactness and in float32 against a float64 shadow loss for
the production precision path.
"""

import math

import numpy as np
import pytest

from bevloc.embed import (
    FcnParams,
    LayerParams,
    LayerSpec,
    backward,
    default_arch,
    forward,
    forward_cached,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zero_grads,
)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def single_layer(kernel=3, norm=False, activation="linear",
                 in_ch=1, out_ch=1, seed=0, dtype=np.float64):
    spec = LayerSpec(in_channels=in_ch, out_channels=out_ch, kernel=kernel,
                     norm=norm, activation=activation)
    return init_params([spec], seed=seed).astype(dtype)


def projection_loss(params, x, r):
    """Linear readout of the network output; gradient w.r.t. output is r."""
    return float(np.sum(forward(params, x).astype(np.float64) * r))


def fd_param_grads(params, x, r, h):
    """Central finite differences over every parameter array."""
    out = zero_grads(params)
    for lp, glp in zip(params.layers, out.layers):
        for arr, garr in zip(lp.arrays(), glp.arrays()):
            flat, gflat = arr.ravel(), garr.ravel()
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                lp_ = projection_loss(params, x, r)
                flat[i] = old - h
                lm = projection_loss(params, x, r)
                flat[i] = old
                gflat[i] = (lp_ - lm) / (2 * h)
    return out


def assert_grads_close(analytic, fd, rtol, atol):
    for a_lp, f_lp in zip(analytic.layers, fd.layers):
        for a, f in zip(a_lp.arrays(), f_lp.arrays()):
            np.testing.assert_allclose(a, f, rtol=rtol, atol=atol)


# ---------------------------------------------------------------------------
# Architecture and parameter plumbing
# ---------------------------------------------------------------------------

class TestArchitecture:
    def test_default_arch_layout(self):
        specs = default_arch(embed_dim=4, width=16, depth=6)
        assert len(specs) == 6
        assert (specs[0].in_channels, specs[0].out_channels) == (1, 16)
        for sp in specs[1:-1]:
            assert (sp.in_channels, sp.out_channels) == (16, 16)
            assert sp.norm and sp.activation == "leaky_relu" and sp.kernel == 3
        last = specs[-1]
        assert (last.in_channels, last.out_channels) == (16, 4)
        assert not last.norm and last.activation == "linear"

    def test_default_arch_depth_one(self):
        (spec,) = default_arch(embed_dim=2, width=16, depth=1)
        assert (spec.in_channels, spec.out_channels) == (1, 2)
        assert not spec.norm and spec.activation == "linear"

    def test_default_arch_rejects_bad_depth(self):
        with pytest.raises(ValueError, match="depth"):
            default_arch(embed_dim=1, depth=0)

    @pytest.mark.parametrize("kwargs", [
        {"kernel": 2}, {"kernel": 0}, {"in_channels": 0},
        {"out_channels": -1}, {"activation": "tanh"},
    ])
    def test_layer_spec_validation(self, kwargs):
        base = {"in_channels": 1, "out_channels": 1}
        with pytest.raises(ValueError):
            LayerSpec(**{**base, **kwargs})

    def test_init_is_seed_deterministic(self):
        specs = default_arch(embed_dim=2, width=8, depth=3)
        a, b = init_params(specs, seed=5), init_params(specs, seed=5)
        c = init_params(specs, seed=6)
        for la, lb in zip(a.layers, b.layers):
            for x, y in zip(la.arrays(), lb.arrays()):
                np.testing.assert_array_equal(x, y)
        assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)

    def test_init_statistics(self):
        spec = LayerSpec(in_channels=32, out_channels=32, kernel=3)
        params = init_params([spec], seed=0)
        w = params.layers[0].weight
        expected_std = math.sqrt(2.0 / (32 * 9))
        assert abs(float(w.std()) - expected_std) < 0.2 * expected_std
        assert np.all(params.layers[0].bias == 0)
        assert np.all(params.layers[0].gamma == 1)
        assert np.all(params.layers[0].beta == 0)
        assert w.dtype == np.float32

    def test_embed_dim_property(self):
        params = init_params(default_arch(embed_dim=3, width=4, depth=2))
        assert params.embed_dim == 3

    def test_copy_is_deep(self):
        params = init_params(default_arch(embed_dim=1, width=4, depth=2))
        dup = params.copy()
        dup.layers[0].weight[...] = 99.0
        assert not np.any(params.layers[0].weight == 99.0)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

class TestForward:
    def test_identity_embedding(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7), dtype=np.float32)
        out = forward(None, img)
        assert out.shape == (1, 5, 7)
        np.testing.assert_array_equal(out[0], img)
        stack = rng.random((3, 5, 7), dtype=np.float32)
        np.testing.assert_array_equal(forward(None, stack), stack)

    def test_rejects_bad_rank_and_channels(self):
        with pytest.raises(ValueError, match="expected"):
            forward(None, np.ones((2, 3, 4, 5)))
        params = single_layer()
        with pytest.raises(ValueError, match="channels"):
            forward(params, np.ones((2, 4, 4)))

    def test_one_by_one_conv_is_affine(self):
        params = single_layer(kernel=1)
        params.layers[0].weight[...] = 2.0
        params.layers[0].bias[...] = 0.5
        x = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        np.testing.assert_allclose(forward(params, x)[0], 2.0 * x + 0.5,
                                   atol=1e-12)

    def test_conv_tap_shifts_with_zero_padding(self):
        # A kernel that is 1 only at its top-left tap reads the input
        # shifted down-right by one, with zeros entering at the border.
        params = single_layer(kernel=3)
        params.layers[0].weight[...] = 0.0
        params.layers[0].weight[0, 0, 0, 0] = 1.0
        params.layers[0].bias[...] = 0.0
        rng = np.random.default_rng(1)
        x = rng.random((5, 6))
        expected = np.zeros_like(x)
        expected[1:, 1:] = x[:-1, :-1]
        np.testing.assert_allclose(forward(params, x)[0], expected, atol=1e-12)

    def test_instance_norm_moments(self):
        params = single_layer(kernel=3, norm=True, out_ch=3, seed=2)
        rng = np.random.default_rng(3)
        y = forward(params, rng.random((16, 20)))
        np.testing.assert_allclose(y.mean(axis=(1, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=(1, 2)), 1.0, atol=1e-3)

    def test_instance_norm_affine_scale_shift(self):
        params = single_layer(kernel=3, norm=True, out_ch=2, seed=4)
        params.layers[0].gamma[...] = np.array([2.0, 0.5])
        params.layers[0].beta[...] = np.array([0.3, -0.1])
        rng = np.random.default_rng(5)
        y = forward(params, rng.random((14, 18)))
        np.testing.assert_allclose(y.mean(axis=(1, 2)), [0.3, -0.1], atol=1e-10)
        np.testing.assert_allclose(np.sqrt(y.var(axis=(1, 2))), [2.0, 0.5],
                                   atol=2e-3)

    def test_leaky_relu_scales_negative_side(self):
        params = single_layer(kernel=1, activation="leaky_relu")
        params.layers[0].weight[...] = 1.0
        params.layers[0].bias[...] = 0.0
        x = np.array([[-2.0, -0.5, 0.0, 0.5, 2.0]])
        np.testing.assert_allclose(forward(params, x)[0],
                                   [[-0.2, -0.05, 0.0, 0.5, 2.0]], atol=1e-12)

    def test_forward_deterministic(self):
        params = init_params(default_arch(embed_dim=2, width=8, depth=4), seed=7)
        rng = np.random.default_rng(8)
        x = rng.random((12, 16), dtype=np.float32)
        np.testing.assert_array_equal(forward(params, x), forward(params, x))

    def test_translation_equivariance_without_norm(self):
        # Pure conv + leaky-ReLU stacks commute with integer shifts away
        # from the zero-padded border; the interior must match exactly.
        specs = [LayerSpec(1, 4, kernel=3, norm=False),
                 LayerSpec(4, 2, kernel=3, norm=False, activation="linear")]
        params = init_params(specs, seed=9).astype(np.float64)
        rng = np.random.default_rng(10)
        x = rng.random((14, 17))
        shifted = np.zeros_like(x)
        shifted[2:, 3:] = x[:-2, :-3]
        y, ys = forward(params, x), forward(params, shifted)
        m = 2  # two 3x3 layers -> receptive-field radius 2
        h, w = x.shape
        np.testing.assert_array_equal(ys[:, 2 + m:h - m, 3 + m:w - m],
                                      y[:, m:h - 2 - m, m:w - 3 - m])

    def test_nonfinite_input_raises(self):
        params = single_layer()
        x = np.ones((4, 4))
        x[1, 2] = np.nan
        with pytest.raises(FloatingPointError, match="non-finite"):
            forward(params, x)
        with pytest.raises(FloatingPointError, match="non-finite"):
            forward_cached(params, x)

    def test_diverged_parameters_raise(self):
        specs = [LayerSpec(1, 2, kernel=3, norm=False),
                 LayerSpec(2, 1, kernel=3, norm=False, activation="linear")]
        params = init_params(specs, seed=0)
        for lp in params.layers:
            lp.weight[...] = 1e30
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError, match="non-finite"):
                forward(params, np.ones((6, 6), dtype=np.float32))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

class TestGradients:
    # atol absorbs central-difference noise (~1e-16/h); normalization
    # makes bias gradients exactly zero, where only that noise remains.
    def _check_f64(self, params, shape, seed, rtol=1e-6, atol=1e-8, h=1e-6):
        rng = np.random.default_rng(seed)
        x = rng.random(shape)
        r = rng.standard_normal((params.embed_dim,) + shape)
        y, caches = forward_cached(params, x)
        assert y.dtype == np.float64
        grads, gx = backward(params, caches, r.astype(y.dtype))
        fd = fd_param_grads(params, x, r, h)
        assert_grads_close(grads, fd, rtol, atol)
        # Gradient w.r.t. the input, spot-checked on a few pixels.
        for (i, j) in [(0, 0), (1, 2), (shape[0] - 1, shape[1] - 2)]:
            old = x[i, j]
            x[i, j] = old + h
            lp_ = projection_loss(params, x, r)
            x[i, j] = old - h
            lm = projection_loss(params, x, r)
            x[i, j] = old
            np.testing.assert_allclose(gx[0, i, j], (lp_ - lm) / (2 * h),
                                       rtol=rtol, atol=atol)

    def test_gradcheck_plain_conv(self):
        self._check_f64(single_layer(kernel=3, in_ch=1, out_ch=2, seed=0),
                        (5, 6), seed=20)

    def test_gradcheck_one_by_one_conv(self):
        self._check_f64(single_layer(kernel=1, in_ch=1, out_ch=3, seed=1),
                        (4, 5), seed=21)

    def test_gradcheck_instance_norm(self):
        self._check_f64(single_layer(kernel=3, norm=True, out_ch=2, seed=2),
                        (6, 6), seed=22)

    def test_gradcheck_leaky_relu(self):
        self._check_f64(single_layer(kernel=3, activation="leaky_relu",
                                     out_ch=2, seed=3), (5, 5), seed=23)

    def test_gradcheck_norm_plus_leaky(self):
        self._check_f64(single_layer(kernel=3, norm=True,
                                     activation="leaky_relu", out_ch=2,
                                     seed=4), (6, 7), seed=24)

    def test_gradcheck_full_stack_f64(self):
        specs = [LayerSpec(1, 3, kernel=3, norm=True),
                 LayerSpec(3, 3, kernel=3, norm=True),
                 LayerSpec(3, 2, kernel=3, norm=False, activation="linear")]
        self._check_f64(init_params(specs, seed=5).astype(np.float64),
                        (7, 8), seed=25)

    @pytest.mark.parametrize("seed", range(6))
    def test_gradcheck_full_stack_f32_vs_f64_shadow(self, seed):
        # Production path runs in float32; its gradient must match finite
        # differences of the float64 shadow network to 1e-3 relative,
        # measured along a random direction through all parameters.
        specs = default_arch(embed_dim=2, width=4, depth=3)
        params32 = init_params(specs, seed=seed)
        params64 = params32.astype(np.float64)
        rng = np.random.default_rng(200 + seed)
        x = rng.random((8, 9)).astype(np.float32)
        r = rng.standard_normal((2, 8, 9))
        y, caches = forward_cached(params32, x)
        grads, _ = backward(params32, caches, r.astype(np.float32))

        direction = zero_grads(params64)
        for lp in direction.layers:
            for arr in lp.arrays():
                arr[...] = rng.standard_normal(arr.shape)
        analytic_dir = sum(
            float(np.sum(g.astype(np.float64) * d))
            for glp, dlp in zip(grads.layers, direction.layers)
            for g, d in zip(glp.arrays(), dlp.arrays()))

        h = 1e-5
        shifted = {+1: params64.copy(), -1: params64.copy()}
        for sign, p in shifted.items():
            for lp, dlp in zip(p.layers, direction.layers):
                for arr, d in zip(lp.arrays(), dlp.arrays()):
                    arr += sign * h * d
        fd_dir = (projection_loss(shifted[+1], x.astype(np.float64), r)
                  - projection_loss(shifted[-1], x.astype(np.float64), r)) / (2 * h)
        assert analytic_dir == pytest.approx(fd_dir, rel=1e-3, abs=1e-6)

    def test_zero_grad_out_gives_zero_grads(self):
        params = init_params(default_arch(embed_dim=2, width=4, depth=3),
                             seed=6)
        x = np.random.default_rng(30).random((6, 6), dtype=np.float32)
        y, caches = forward_cached(params, x)
        grads, gx = backward(params, caches, np.zeros_like(y))
        for lp in grads.layers:
            for arr in lp.arrays():
                assert not np.any(arr)
        assert not np.any(gx)

    def test_grad_shapes_mirror_params(self):
        params = init_params(default_arch(embed_dim=3, width=5, depth=2),
                             seed=7)
        x = np.random.default_rng(31).random((5, 7), dtype=np.float32)
        y, caches = forward_cached(params, x)
        grads, gx = backward(params, caches, np.ones_like(y))
        for lp, glp in zip(params.layers, grads.layers):
            for a, g in zip(lp.arrays(), glp.arrays()):
                assert a.shape == g.shape and a.dtype == g.dtype
        assert gx.shape == (1, 5, 7)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

class TestCheckpoint:
    def _pair(self, embed_dim=2, seed=0):
        specs = default_arch(embed_dim=embed_dim, width=4, depth=3)
        return (init_params(specs, seed=seed),
                init_params(specs, seed=seed + 1))

    def test_roundtrip_bitwise(self, tmp_path):
        path = tmp_path / "model.fcn"
        po, pm = self._pair()
        save_checkpoint(path, po, pm)
        qo, qm = load_checkpoint(path)
        for orig, loaded in ((po, qo), (pm, qm)):
            assert orig.specs == loaded.specs
            for lo, ll in zip(orig.layers, loaded.layers):
                for a, b in zip(lo.arrays(), ll.arrays()):
                    np.testing.assert_array_equal(a, b)
                    assert b.dtype == np.float32

    def test_mismatched_branch_dims_rejected_on_save(self, tmp_path):
        po, _ = self._pair(embed_dim=2)
        pm, _ = self._pair(embed_dim=3)
        with pytest.raises(ValueError, match="dims differ"):
            save_checkpoint(tmp_path / "bad.fcn", po, pm)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.fcn"
        save_checkpoint(path, *self._pair())
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "model.fcn"
        save_checkpoint(path, *self._pair())
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "model.fcn"
        save_checkpoint(path, *self._pair())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.fcn"
        save_checkpoint(path, *self._pair())
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 7])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)
