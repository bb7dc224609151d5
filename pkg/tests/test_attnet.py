import math

import numpy as np
import pytest

from beamloc import attnet
from beamloc import tensor as T
from beamloc.attnet import AttentionNet, ConfigError, HeadKind, NetConfig
from beamloc.tensor import ShapeError

from gradcases import SMALL, perturb


def _softmax_col(v):
    e = np.exp(v - v.max())
    return e / e.sum()


class TestPositional:
    def test_column_zero(self):
        pe = attnet.positional_matrix(128, 46)
        np.testing.assert_array_equal(pe[0::2, 0], 0.0)  # odd 1-based rows: sin(0)
        np.testing.assert_array_equal(pe[1::2, 0], 1.0)  # even rows: cos(0)

    def test_hand_value(self):
        pe = attnet.positional_matrix(4, 3)
        assert pe[0, 1] == pytest.approx(math.sin(1 / 10000 ** 0.25), abs=1e-15)
        assert pe[0, 1] == pytest.approx(0.0998, abs=1e-4)
        assert pe[1, 2] == pytest.approx(math.cos(2 / 10000 ** 0.25), abs=1e-15)

    def test_added(self):
        X = np.random.default_rng(0).random((8, 5))
        np.testing.assert_allclose(attnet.positional_encode(X).value - X, attnet.positional_matrix(8, 5))


class TestAttentionHead:
    def test_zero_query_gives_column_mean(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 5))
        Wv = rng.normal(size=(6, 6))
        Z = attnet.attention_head(X, np.zeros((6, 6)), rng.normal(size=(6, 6)), Wv).value
        V = Wv @ X
        np.testing.assert_allclose(Z, np.repeat(V.mean(axis=1, keepdims=True), 5, axis=1), rtol=1e-12)

    def test_single_column(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(4, 1))
        Wv = rng.normal(size=(4, 4))
        Z, A = attnet.attention_head(X, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), Wv,
                                     return_weights=True)
        np.testing.assert_array_equal(A.value, [[1.0]])
        np.testing.assert_allclose(Z.value, Wv @ X, rtol=1e-14)

    def test_two_by_two_by_hand(self):
        I = np.eye(2)
        Z, A = attnet.attention_head(I, I, I, I, return_weights=True)
        a = 1 / math.sqrt(2)
        big, small = math.exp(a) / (math.exp(a) + 1), 1 / (math.exp(a) + 1)
        expected = np.array([[big, small], [small, big]])
        np.testing.assert_allclose(A.value, expected, rtol=1e-14)
        np.testing.assert_allclose(Z.value, expected, rtol=1e-14)  # V = I

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        n, f = 5, 4
        X, Wq, Wk, Wv = (rng.normal(size=s) for s in [(n, f), (n, n), (n, n), (n, n)])
        Q, K, V = Wq @ X, Wk @ X, Wv @ X
        Z = np.zeros((n, f))
        for j in range(f):
            scores = np.array([Q[:, i] @ K[:, j] for i in range(f)]) / math.sqrt(n)
            w = _softmax_col(scores)
            Z[:, j] = sum(w[i] * V[:, i] for i in range(f))
        np.testing.assert_allclose(attnet.attention_head(X, Wq, Wk, Wv).value, Z, rtol=1e-12)

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(4)
        X = rng.normal(scale=4, size=(3, 8, 6))
        _, A = attnet.attention_head(X, *(rng.normal(size=(8, 8)) for _ in range(3)), return_weights=True)
        np.testing.assert_allclose(A.value.sum(axis=-2), 1.0, atol=1e-12)


class TestMultiHead:
    def test_identity_projection_one_head(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(4, 3))
        h = tuple(rng.normal(size=(4, 4)) for _ in range(3))
        np.testing.assert_allclose(attnet.multi_head(X, [h], np.eye(3)).value,
                                   attnet.attention_head(X, *h).value, rtol=1e-14)

    def test_zero_projection(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(4, 3))
        hs = [tuple(rng.normal(size=(4, 4)) for _ in range(3)) for _ in range(2)]
        np.testing.assert_array_equal(attnet.multi_head(X, hs, np.zeros((6, 3))).value, 0.0)

    def test_block_product_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(4, 3))
        hs = [tuple(rng.normal(size=(4, 4)) for _ in range(3)) for _ in range(2)]
        WO = rng.normal(size=(6, 3))
        Z1, Z2 = (attnet.attention_head(X, *h).value for h in hs)
        expected = Z1 @ WO[:3] + Z2 @ WO[3:]
        np.testing.assert_allclose(attnet.multi_head(X, hs, WO).value, expected, rtol=1e-12)


class TestNetwork:
    def test_default_shapes(self):
        net = AttentionNet(NetConfig(head="mse"))
        P = net.params
        assert P["b0.h0.W_q"].shape == (128, 128)
        assert P["b0.W_O"].shape == (92, 46)
        assert P["b0.W_1"].shape == (46, 128) and P["b0.W_2"].shape == (128, 46)
        assert P["fc0.W"].shape == (5888, 128)
        Z = net.encode(np.random.default_rng(0).random((2, 128, 46)))
        assert Z.shape == (2, 128, 46)

    @pytest.mark.parametrize("head,width", [("mse", 2), ("nll", 4), ("rbc", 202)])
    def test_output_lengths(self, head, width):
        net = AttentionNet(NetConfig(head=head, l_x=100, l_y=100))
        out = attnet.forward(net, np.random.default_rng(1).random((128, 46)))
        assert out.shape == (width,)
        assert np.all(np.isfinite(out))
        if head == "rbc":
            assert abs(out[:100].sum() - 1) < 1e-12 and abs(out[100:200].sum() - 1) < 1e-12
        if head == "nll":
            assert np.all(out[2:] > 0)

    def test_zero_weights_leave_residual_path(self):
        net = AttentionNet(NetConfig(**SMALL, head="mse"))
        for name, p in net.params.items():
            if name.startswith("b0.") and ".ln" not in name:
                p.value = np.zeros_like(p.value)
        X = np.random.default_rng(2).normal(size=(1, 6, 5))
        ln = lambda a: (a - a.mean()) / np.sqrt(a.var() + 1e-9)  # noqa: E731
        np.testing.assert_allclose(net.encode(X).value[0], ln(ln(X[0])), rtol=1e-9, atol=1e-12)

    def test_permutation_equivariance_without_encoding(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(1, 6, 5))
        perm = rng.permutation(5)
        plain = AttentionNet(NetConfig(**SMALL, positional_encoding=False))
        # W_O mixes columns, so equivariance holds for the attention output itself
        hs = plain.heads()
        z = attnet.attention_head(X[0], *hs[0]).value
        zp = attnet.attention_head(X[0][:, perm], *hs[0]).value
        np.testing.assert_allclose(zp, z[:, perm], rtol=1e-12)
        pe = attnet.positional_encode
        assert not np.allclose(pe(X[0]).value[:, perm], pe(X[0][:, perm]).value)

    def test_batch_equals_single(self):
        net = AttentionNet(NetConfig(**SMALL, head="nll"))
        X = np.random.default_rng(4).random((3, 6, 5))
        batch = net.forward(X).value
        for i in range(3):
            np.testing.assert_allclose(net.forward(X[i]).value, batch[i], rtol=1e-13)

    def test_shape_mismatch(self):
        net = AttentionNet(NetConfig(**SMALL))
        with pytest.raises(ShapeError):
            net.forward(np.zeros((2, 5, 6)))

    def test_head_mismatch(self):
        net = AttentionNet(NetConfig(**SMALL, head="mse"))
        with pytest.raises(ConfigError):
            attnet.forward(net, np.zeros((6, 5)), head=HeadKind.RBC)

    def test_seeded_init_is_deterministic(self):
        a = AttentionNet(NetConfig(**SMALL, seed=3)).state_blob()
        b = AttentionNet(NetConfig(**SMALL, seed=3)).state_blob()
        c = AttentionNet(NetConfig(**SMALL, seed=4)).state_blob()
        assert a == b and a != c

    def test_float32_close_to_float64(self):
        X = np.random.default_rng(5).random((2, 128, 46))
        m64 = perturb(AttentionNet(NetConfig(head="rbc", l_x=100, l_y=100)), np.random.default_rng(6), 0.01)
        m32 = AttentionNet(NetConfig(head="rbc", l_x=100, l_y=100, dtype="float32"))
        for name, p in m32.params.items():
            p.value = m64.params[name].value.astype(np.float32)
        y64, y32 = m64.predict(X), m32.predict(X)
        assert m32.params["fc0.W"].value.dtype == np.float32
        np.testing.assert_allclose(y32, y64, atol=1e-4)
        np.testing.assert_allclose(y32[:, :100].sum(axis=1), 1.0, atol=1e-12)

    def test_rbc_head_starts_uniform(self):
        net = AttentionNet(NetConfig(**(SMALL | {"l_x": 7, "l_y": 5}), head="rbc"))
        out = net.predict(np.random.default_rng(7).random((4, 6, 5)))
        np.testing.assert_allclose(out[:, :7], 1 / 7, rtol=1e-12)
        np.testing.assert_allclose(out[:, 7:12], 1 / 5, rtol=1e-12)
        np.testing.assert_array_equal(out[:, 12:], 0.0)

    def test_bad_dtype(self):
        with pytest.raises(ConfigError):
            NetConfig(dtype="float16")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = AttentionNet(NetConfig(**SMALL, head="rbc", seed=11))
        attnet.save_checkpoint(net, tmp_path / "ck", epoch=7, extra={"note": "x"})
        loaded, manifest = attnet.load_checkpoint(tmp_path / "ck")
        assert manifest["epoch"] == 7 and manifest["extra"] == {"note": "x"}
        assert loaded.state_blob() == net.state_blob()
        X = np.random.default_rng(0).random((2, 6, 5))
        np.testing.assert_array_equal(loaded.predict(X), net.predict(X))

    def test_byte_stable(self, tmp_path):
        for d in ("a", "b"):
            (tmp_path / d).mkdir()
            attnet.save_checkpoint(AttentionNet(NetConfig(**SMALL, seed=5)), tmp_path / d / "ck", 0)
        for suffix in (".json", ".bin"):
            assert (tmp_path / "a" / f"ck{suffix}").read_bytes() == (tmp_path / "b" / f"ck{suffix}").read_bytes()

    def test_truncated_blob(self, tmp_path):
        net = AttentionNet(NetConfig(**SMALL))
        attnet.save_checkpoint(net, tmp_path / "ck", 0)
        blob = (tmp_path / "ck.bin").read_bytes()
        (tmp_path / "ck.bin").write_bytes(blob[:-8])
        with pytest.raises(ConfigError):
            attnet.load_checkpoint(tmp_path / "ck")


def test_training_reduces_loss():
    from beamloc import losses
    cfg = NetConfig(**SMALL, head="mse", seed=1)
    net = AttentionNet(cfg)
    rng = np.random.default_rng(0)
    X = rng.random((16, 6, 5))
    P = np.column_stack([rng.uniform(-2, 2, 16), rng.uniform(0, 3, 16)])
    opt = T.Adam(net.parameters, lr=1e-2)
    first = None
    for _ in range(60):
        loss = losses.mse_loss(net.forward(X), P)
        first = first if first is not None else float(loss.value)
        opt.zero_grad()
        T.backward(loss)
        opt.step()
    assert float(loss.value) < 0.5 * first
