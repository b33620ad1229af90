import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ssvep_bima import nn
from ssvep_bima.errors import FormatError, ParameterError, ShapeError, SizeError
from ssvep_bima.model import (
    ABLATION_FLAGS,
    BimaConfig,
    BimaModel,
    decode_checkpoint,
    encode_checkpoint,
    forward_tokens,
    fuse_tokens,
    load_checkpoint,
    mhsa_encoder_forward,
    mlp_head_forward,
    model_forward,
    save_checkpoint,
    wmf_forward,
    zscore_channels,
)
from ssvep_bima.nn import functional as F
from ssvep_bima.spectral import SpectralConfig
from ssvep_bima.verify import gradcheck_instance

SMALL_SPECTRAL = SpectralConfig(1.0, 2.0, 14.0)


def naive_wmf(X, W):
    out = np.zeros((W.shape[0], X.shape[1]))
    for i in range(W.shape[0]):
        for t in range(X.shape[1]):
            out[i, t] = math.fsum(W[i, c] * X[c, t] for c in range(X.shape[0]))
    return out


def small_model(seed=0, **overrides):
    cfg = BimaConfig(num_channels=3, num_classes=3, dropout_p=0.0, **overrides)
    return BimaModel.create(cfg, 32.0, 32, SMALL_SPECTRAL, seed=seed)


class TestConfig:
    def test_defaults(self):
        cfg = BimaConfig(num_channels=8, num_classes=12)
        assert (cfg.wmf_kernels, cfg.num_heads, cfg.ff_hidden, cfg.mlp_hidden) == (16, 2, 32, 72)
        assert cfg.d_k == 8
        assert cfg.enabled_streams() == ("na", "sa")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"wmf_kernels": 6, "num_heads": 4},
            {"na_stream_enabled": False, "sa_stream_enabled": False},
            {"dropout_p": 1.0},
            {"mask_penalty": 0.0},
            {"num_classes": 1},
            {"wmf_kernels": 5, "num_heads": 1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            BimaConfig(**{"num_channels": 3, "num_classes": 3, **kwargs})

    def test_ablated(self):
        cfg = BimaConfig(num_channels=3, num_classes=3)
        for key, field in ABLATION_FLAGS.items():
            assert getattr(cfg.ablated([key]), field) is False
        with pytest.raises(ParameterError):
            cfg.ablated(["na", "sa"])
        with pytest.raises(ParameterError):
            cfg.ablated(["attention"])

    def test_dict_round_trip(self):
        cfg = BimaConfig(num_channels=4, num_classes=5, mask_enabled=False)
        assert BimaConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ParameterError):
            BimaConfig.from_dict({**cfg.to_dict(), "depth": 3})


class TestWmf:
    def test_one_hot_selects_channel(self):
        X = np.random.default_rng(0).standard_normal((4, 10))
        W = np.zeros((2, 4))
        W[0, 2] = W[1, 0] = 1.0
        out = wmf_forward(X, W)
        assert_array_equal(out[0], X[2])
        assert_array_equal(out[1], X[0])

    def test_small(self):
        out = wmf_forward([[1, 2, 3], [4, 5, 6]], [[1, 1], [1, -1]])
        assert_array_equal(out, [[5, 7, 9], [-3, -3, -3]])

    def test_naive_oracle(self):
        rng = np.random.default_rng(1)
        X, W = rng.standard_normal((8, 64)), rng.standard_normal((16, 8))
        assert_allclose(wmf_forward(X, W), naive_wmf(X, W), rtol=0, atol=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            wmf_forward(np.zeros((3, 5)), np.zeros((6, 4)))

    def test_disabled_replicates_channels(self):
        m = small_model(wmf_enabled=False)
        assert not any(n.endswith("wmf.weight") for n in m.params)
        trials = np.random.default_rng(2).standard_normal((2, 3, 32))
        assert np.all(np.isfinite(m.logits(trials)))


class TestZscore:
    def test_moments(self):
        x = np.random.default_rng(3).normal(5.0, 3.0, (2, 4, 100))
        z = zscore_channels(x)
        assert_allclose(z.mean(axis=-1), 0.0, atol=1e-12)
        assert_allclose(z.std(axis=-1), 1.0, atol=1e-12)

    def test_constant_channel(self):
        assert_array_equal(zscore_channels(np.full((1, 2, 8), 7.0)), 0.0)


class TestAttentionExamples:
    def test_single_token(self):
        _, W = F.masked_attention([[3.0, -1.0]], [[0.5, 2.0]], [[1.0]])
        assert_array_equal(W, [[1.0]])

    def test_constant_row_is_uniform(self):
        Q = np.ones((4, 2))
        _, W = F.masked_attention(Q, Q, np.eye(4))
        assert_allclose(W, 0.25, atol=1e-15)

    def test_three_scores(self):
        # Q = S, K = sqrt(3) I so that Q K^T / sqrt(3) = S
        S = np.array([[1.0, 2.0, 3.0]])
        Q = np.zeros((1, 3))
        Q[0] = S
        _, W = F.masked_attention(Q, math.sqrt(3) * np.eye(3), np.eye(3))
        e = math.exp(1.0)
        assert_allclose(W[0], [0.0, 1 / (1 + e), e / (1 + e)], atol=1e-12)
        assert abs(W[0, 1] - 0.26894) < 1e-5 and abs(W[0, 2] - 0.73106) < 1e-5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.01, 30.0))
    def test_row_properties(self, T, d, seed, spread):
        rng = np.random.default_rng(seed)
        Q, K = spread * rng.standard_normal((2, T, d))
        V = rng.standard_normal((T, 3))
        _, W = F.masked_attention(Q, K, V)
        S = Q @ K.T / math.sqrt(d)
        below = S < S.mean(axis=1, keepdims=True)
        assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(W[below] < 1e-6)
        survivors = (~below).sum(axis=1)
        assert np.all((survivors >= 1) & (survivors <= T))


class TestPositionalEncoding:
    def test_examples(self):
        pe = F.positional_encoding(256, 16)
        assert_array_equal(pe[0], np.tile([0.0, 1.0], 8))
        assert abs(pe[1, 0] - math.sin(1.0)) < 1e-15
        assert abs(pe[1, 0] - 0.84147) < 1e-5
        assert np.all(np.abs(pe) <= 1.0)


def encoder_params(rng, N, ff, zero=False):
    p = nn.ParamStore()
    w = (lambda *s: np.zeros(s)) if zero else (lambda *s: 0.4 * rng.standard_normal(s))
    for name in ("wq", "wk", "wv"):
        p.add(f"e.{name}.weight", w(N, N))
    p.add("e.wo.weight", w(N, N))
    p.add("e.wo.bias", w(N))
    p.add("e.ff1.weight", w(N, ff))
    p.add("e.ff1.bias", w(ff))
    p.add("e.ff2.weight", w(ff, N))
    p.add("e.ff2.bias", w(N))
    for ln in ("ln1", "ln2"):
        p.add(f"e.{ln}.gamma", np.ones(N))
        p.add(f"e.{ln}.beta", np.zeros(N))
    return p


class TestEncoder:
    def test_zero_weights_give_layer_norm(self):
        rng = np.random.default_rng(4)
        cfg = BimaConfig(num_channels=3, num_classes=3, dropout_p=0.0)
        X = 5.0 * rng.standard_normal((10, 6))
        out = mhsa_encoder_forward(X, encoder_params(rng, 6, 12, zero=True), "e", cfg).data
        assert out.shape == (10, 6)
        ln = F.layer_norm_forward(X, np.ones(6), np.zeros(6), cfg.ln_eps)
        assert_allclose(out, ln, atol=1e-5)

    def test_shape(self):
        rng = np.random.default_rng(5)
        cfg = BimaConfig(num_channels=4, num_classes=3, dropout_p=0.0)
        out = mhsa_encoder_forward(rng.standard_normal((2, 7, 8)), encoder_params(rng, 8, 16), "e", cfg)
        assert out.shape == (2, 7, 8)
        assert mhsa_encoder_forward(rng.standard_normal((7, 8)), encoder_params(rng, 8, 16), "e", cfg).shape == (7, 8)

    def test_one_head_equals_two_duplicated_heads(self):
        # two heads with identical Q/K blocks attend identically, which one head
        # of double width reproduces once its scores are rescaled by 1/sqrt(2)
        rng = np.random.default_rng(6)
        N, T = 8, 9
        wq, wk = rng.standard_normal((2, N, N // 2))
        two = encoder_params(rng, N, 16)
        one = nn.ParamStore(two.arrays())
        two["e.wq.weight"].data[:] = np.hstack([wq, wq])
        two["e.wk.weight"].data[:] = np.hstack([wk, wk])
        one["e.wq.weight"].data[:] = np.hstack([wq, wq]) / math.sqrt(2)
        one["e.wk.weight"].data[:] = np.hstack([wk, wk])
        X = rng.standard_normal((T, N))
        base = dict(num_channels=4, num_classes=3, dropout_p=0.0)
        a = mhsa_encoder_forward(X, two, "e", BimaConfig(num_heads=2, **base)).data
        b = mhsa_encoder_forward(X, one, "e", BimaConfig(num_heads=1, **base)).data
        assert_allclose(a, b, atol=1e-12)

    def test_width_mismatch(self):
        cfg = BimaConfig(num_channels=3, num_classes=3)
        with pytest.raises(ShapeError):
            mhsa_encoder_forward(np.zeros((4, 8)), encoder_params(np.random.default_rng(0), 6, 12), "e", cfg)


class TestFuse:
    def test_dataset_defaults(self):
        m = BimaModel.create(BimaConfig(num_channels=8, num_classes=12), 256.0, 256)
        t_na, t_sa = m.token_counts()
        assert (t_na, t_sa) == (256, 450)
        fused = fuse_tokens(np.zeros((t_na, 16)), np.ones((t_sa, 16)))
        assert fused.shape == (706, 16)
        assert not fused.data[:256].any() and fused.data[256:].all()

    def test_single_stream(self):
        na = np.random.default_rng(7).standard_normal((5, 4))
        assert_array_equal(fuse_tokens(na, None).data, na)

    def test_errors(self):
        with pytest.raises(ShapeError):
            fuse_tokens(None, None)
        with pytest.raises(ShapeError):
            fuse_tokens(np.zeros((3, 4)), np.zeros((3, 5)))


def head_params(rng, width, H, K, zero=False):
    p = nn.ParamStore()
    w = (lambda *s: np.zeros(s)) if zero else (lambda *s: 0.3 * rng.standard_normal(s))
    p.add("head.fc1.weight", w(width, H))
    p.add("head.fc1.bias", w(H))
    p.add("head.ln.gamma", np.ones(H) + (0 if zero else 0.1 * rng.standard_normal(H)))
    p.add("head.ln.beta", w(H))
    p.add("head.fc2.weight", w(H, K))
    p.add("head.fc2.bias", w(K))
    return p


class TestHead:
    def test_zero_weights(self):
        cfg = BimaConfig(num_channels=2, num_classes=12)
        p = head_params(None, 20, cfg.mlp_hidden, 12, zero=True)
        logits = mlp_head_forward(np.random.default_rng(8).standard_normal((5, 4)), p, cfg).data
        assert logits.shape == (12,)
        assert_array_equal(logits, 0.0)

    def test_twelve_classes(self):
        m = BimaModel.create(BimaConfig(num_channels=8, num_classes=12), 256.0, 256)
        x = np.random.default_rng(9).standard_normal((8, 256))
        assert model_forward(x, m).shape == (12,)

    def test_gradcheck(self):
        rng = np.random.default_rng(10)
        cfg = BimaConfig(num_channels=2, num_classes=3, dropout_p=0.0)
        fused = rng.standard_normal((2, 5, 4))
        labels = np.array([0, 2])
        p = head_params(rng, 20, cfg.mlp_hidden, 3)
        loss = lambda q: nn.cross_entropy_loss(mlp_head_forward(fused, q, cfg), labels)
        assert nn.grad_check(loss, p) < 1e-6

    def test_width_mismatch(self):
        cfg = BimaConfig(num_channels=2, num_classes=3)
        with pytest.raises(ShapeError):
            mlp_head_forward(np.zeros((4, 4)), head_params(np.random.default_rng(0), 20, 18, 3), cfg)


class TestModelForward:
    def test_deterministic(self):
        m = small_model(seed=3)
        x = np.random.default_rng(11).standard_normal((4, 3, 32))
        assert_array_equal(m.logits(x), m.logits(x))
        assert_array_equal(model_forward(x[0], m), model_forward(x[0], m))
        assert_allclose(model_forward(x[0], m), m.logits(x)[0], atol=1e-13)

    def test_training_dropout_is_seeded(self):
        cfg = BimaConfig(num_channels=3, num_classes=3, dropout_p=0.5)
        m = BimaModel.create(cfg, 32.0, 32, SMALL_SPECTRAL)
        x = np.random.default_rng(12).standard_normal((2, 3, 32))
        a = model_forward(x, m, training=True, rng=np.random.default_rng(1))
        b = model_forward(x, m, training=True, rng=np.random.default_rng(1))
        assert_array_equal(a, b)

    def test_finite_at_full_size(self):
        m = BimaModel.create(BimaConfig(num_channels=8, num_classes=12), 256.0, 256, seed=1)
        x = np.random.default_rng(13).standard_normal((3, 8, 256))
        assert np.all(np.isfinite(m.logits(x)))

    def test_permuting_fc2_permutes_logits(self):
        m = small_model(seed=4)
        x = np.random.default_rng(14).standard_normal((3, 3, 32))
        m.params["head.fc2.bias"].data[:] = [0.1, -0.2, 0.3]
        before = m.logits(x)
        perm = np.array([2, 0, 1])
        m.params["head.fc2.weight"].data[:] = m.params["head.fc2.weight"].data[:, perm]
        m.params["head.fc2.bias"].data[:] = m.params["head.fc2.bias"].data[perm]
        assert_array_equal(m.logits(x), before[:, perm])

    def test_argmax_shift_invariant(self):
        m = small_model(seed=5)
        x = np.random.default_rng(15).standard_normal((6, 3, 32))
        before = m.predict(x)
        m.params["head.fc2.bias"].data[:] += 4.0
        assert_array_equal(m.predict(x), before)

    def test_sample_count_checked(self):
        with pytest.raises(ShapeError):
            small_model().logits(np.zeros((1, 3, 30)))
        with pytest.raises(ShapeError):
            small_model().logits(np.zeros((1, 4, 32)))

    @pytest.mark.parametrize("disable", [[k] for k in ABLATION_FLAGS])
    def test_ablations_run(self, disable):
        cfg = BimaConfig(num_channels=3, num_classes=3, dropout_p=0.0).ablated(disable)
        m = BimaModel.create(cfg, 32.0, 32, SMALL_SPECTRAL)
        t_na, t_sa = m.token_counts()
        assert t_na == (0 if "na" in disable else 32)
        assert t_sa == (0 if "sa" in disable else 26)
        assert m.params["head.fc1.weight"].shape[0] == (t_na + t_sa) * 6
        logits = m.logits(np.random.default_rng(16).standard_normal((2, 3, 32)))
        assert logits.shape == (2, 3) and np.all(np.isfinite(logits))

    def test_mask_changes_output(self):
        x = np.random.default_rng(17).standard_normal((2, 3, 32))
        on = small_model(seed=6)
        off = BimaModel(on.config.ablated(["mask"]), on.spectral, on.sampling_rate_hz, on.num_samples, on.params)
        assert not np.allclose(on.logits(x), off.logits(x))

    def test_full_gradcheck(self):
        model, loss = gradcheck_instance(seed=0, batch=2)
        assert nn.grad_check(loss, model.params) < 1e-4

    def test_forward_tokens_batches_independent(self):
        m = small_model(seed=7)
        x = np.random.default_rng(18).standard_normal((3, 3, 32))
        whole = forward_tokens(m.prepare(x), m.params, m.config).data
        for i in range(3):
            assert_allclose(whole[i], forward_tokens(m.prepare(x[i : i + 1]), m.params, m.config).data[0], atol=1e-13)


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path):
        m = small_model(seed=8)
        raw = encode_checkpoint(m)
        assert encode_checkpoint(decode_checkpoint(raw)) == raw
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert encode_checkpoint(back) == raw
        x = np.random.default_rng(19).standard_normal((2, 3, 32))
        assert_array_equal(back.logits(x), m.logits(x))

    def test_payload_is_little_endian_f8(self):
        m = small_model(seed=9)
        raw = encode_checkpoint(m)
        payload = raw[raw.index(b"\n") + 1 :]
        first = next(iter(m.params.values())).data.ravel()
        assert_array_equal(np.frombuffer(payload[: 8 * first.size], dtype="<f8"), first)

    def test_errors(self):
        raw = encode_checkpoint(small_model())
        with pytest.raises(SizeError):
            decode_checkpoint(raw[:-8])
        with pytest.raises(FormatError):
            decode_checkpoint(b"no newline")
        with pytest.raises(FormatError):
            decode_checkpoint(b"{not json\n")
        with pytest.raises(FormatError):
            decode_checkpoint(raw.replace(b"BIMA-CKPT", b"OTHER-FMT", 1))
