import numpy as np
import pytest

from joao import autodiff as ad
from joao.augment import AugmentationKind as K, apply
from joao.contrastive import nt_xent
from joao.graph import batch_graphs
from joao.nn import (
    MLP,
    CheckpointError,
    EncoderParams,
    Forward,
    GradientBundle,
    ModelState,
    gin_encode,
    init_state,
    load_checkpoint,
    loss_and_grad,
    project,
    save_checkpoint,
    sgd_step,
)
from joao.rng import substream
from joao.synthetic import random_graph


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def zero_state(in_dim=2, hidden=4, proj=3, layers=2, heads=1):
    def mlp(i, h, o):
        return MLP(np.zeros((i, h)), np.zeros(h), np.zeros((h, o)), np.zeros(o))
    enc = EncoderParams([mlp(in_dim if k == 0 else hidden, hidden, hidden) for k in range(layers)], (0.0,) * layers)
    return ModelState(enc, [mlp(hidden, hidden, proj) for _ in range(heads)])


class TestAutodiffOps:
    @pytest.mark.parametrize("op", ["matmul", "relu", "normalize", "lse", "diag", "bias", "const"])
    def test_against_finite_differences(self, op, rng):
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=(3,))
        m = rng.normal(size=(2, 4))
        probe = rng.normal(size=(4, 5))

        def build(xt):
            if op == "matmul":
                return ad.total(ad.mul(xt @ ad.Tensor(w), ad.Tensor(probe)))
            if op == "relu":
                return ad.total(ad.mul(ad.relu(xt), ad.Tensor(probe[:, :3])))
            if op == "normalize":
                return ad.total(ad.mul(ad.normalize_rows(xt), ad.Tensor(probe[:, :3])))
            if op == "lse":
                return ad.total(ad.mul(ad.logsumexp_rows(xt), ad.Tensor(probe[:, :1])))
            if op == "diag":
                return ad.total(ad.mul(ad.diagonal(xt), ad.Tensor(probe[:3, :1])))
            if op == "bias":
                return ad.mean(ad.mul(xt + ad.Tensor(b), xt))
            return ad.total(ad.const_matmul(m, xt))

        xt = ad.Tensor(x, requires_grad=True)
        build(xt).backward()
        fd = central_difference(lambda: build(ad.Tensor(x)).item(), x)
        assert np.all(rel_err(xt.grad, fd) < 1e-6)

    def test_shared_subexpression_accumulates(self):
        x = ad.Tensor(np.array([[2.0]]), requires_grad=True)
        y = x * x
        z = ad.total(y + y * 3.0)
        z.backward()
        assert x.grad[0, 0] == pytest.approx(16.0)

    def test_zero_row_normalise_raises(self):
        with pytest.raises(ZeroDivisionError):
            ad.normalize_rows(ad.Tensor(np.zeros((2, 3))))


class TestEncoder:
    def test_zero_params_zero_embeddings(self, rng):
        b = batch_graphs([random_graph(rng, 6, 2) for _ in range(3)])
        assert not gin_encode(zero_state(), b).any()

    def test_permutation_invariance(self, rng):
        s = init_state(3, hidden=8, proj_dim=4, seed=1)
        for _ in range(10):
            g = random_graph(rng, 8, 3)
            perm = rng.permutation(g.num_nodes)
            a = gin_encode(s, batch_graphs([g]))
            b = gin_encode(s, batch_graphs([g.permuted(perm)]))
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_duplicate_graph_identical_rows(self, rng):
        g = random_graph(rng, 6, 3)
        e = gin_encode(init_state(3, seed=0), batch_graphs([g, g]))
        np.testing.assert_array_equal(e[0], e[1])

    def test_batch_equals_individual(self, rng):
        s = init_state(3, hidden=8, seed=4)
        gs = [random_graph(rng, 7, 3) for _ in range(5)]
        whole = gin_encode(s, batch_graphs(gs))
        single = np.concatenate([gin_encode(s, batch_graphs([g])) for g in gs])
        np.testing.assert_allclose(whole, single, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            gin_encode(init_state(2), batch_graphs([random_graph(rng, 4, 3)]))

    def test_default_architecture(self):
        s = init_state(7)
        assert s.dims == {"in_dim": 7, "hidden": 32, "num_layers": 3, "proj_dim": 32, "num_heads": 1}


class TestProject:
    def test_zero_head(self, rng):
        assert not project(zero_state(), rng.normal(size=(3, 4))).any()

    def test_identity_head_passes_nonnegative_input(self, rng):
        s = zero_state(hidden=4, proj=4)
        h = s.heads[0]
        h.W1[:], h.W2[:] = np.eye(4), np.eye(4)
        x = np.abs(rng.normal(size=(5, 4)))
        np.testing.assert_array_equal(project(s, x), x)

    def test_shape(self, rng):
        s = init_state(2, hidden=6, proj_dim=3)
        assert project(s, rng.normal(size=(4, 6))).shape == (4, 3)
        with pytest.raises(ValueError):
            project(s, rng.normal(size=(4, 5)))


class TestGradients:
    def test_zero_params_zero_loss_and_grad(self, rng):
        b = batch_graphs([random_graph(rng, 5, 2) for _ in range(2)])
        loss, grads = loss_and_grad(zero_state(), lambda f: ad.total(ad.mul(f.encode(b), f.encode(b))))
        assert loss == 0.0
        assert all(not g.any() for g in grads.arrays.values())

    def test_scaling_loss_scales_grad(self, rng):
        b = batch_graphs([random_graph(rng, 5, 2) for _ in range(3)])
        s = init_state(2, hidden=4, proj_dim=4, seed=2)
        fn = lambda f: nt_xent(f.project(f.encode(b)), f.project(f.encode(b)) * 1.5 + 0.1)
        _, g1 = loss_and_grad(s, fn)
        _, g2 = loss_and_grad(s, lambda f: fn(f) * 2.0)
        for k in g1.arrays:
            np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)

    def test_encoder_loss_matches_finite_differences(self):
        worst = 0.0
        for t in range(20):
            r = np.random.default_rng(100 + t)
            gs = [random_graph(r, 6, 3) for _ in range(2)]
            v1 = batch_graphs(gs)
            v2 = batch_graphs([apply(K.ATTR_MASK, g, 0.3, substream(t, "fd", k)) for k, g in enumerate(gs)])
            s = init_state(3, hidden=4, proj_dim=4, seed=t)

            def loss(f):
                return nt_xent(f.project(f.encode(v1)), f.project(f.encode(v2)))

            _, grads = loss_and_grad(s, loss)
            for name, a in s.named_arrays():
                fd = central_difference(lambda: loss(Forward(s)).item(), a)
                worst = max(worst, rel_err(grads[name], fd).max())
        assert worst < 1e-4

    def test_non_finite_loss_aborts(self, rng):
        from joao.errors import NumericalAbort
        with pytest.raises(NumericalAbort):
            loss_and_grad(init_state(2), lambda f: ad.Tensor(np.array(np.nan)))


class TestSGD:
    def test_zero_lr_bit_identical(self, rng):
        s = init_state(2, seed=3)
        grads = GradientBundle({n: rng.normal(size=a.shape) for n, a in s.named_arrays()})
        out = sgd_step(s, grads, 0.0)
        for (n, a), (_, b) in zip(s.named_arrays(), out.named_arrays()):
            assert a.tobytes() == b.tobytes()

    def test_zero_gradient(self):
        s = init_state(2, seed=3)
        out = sgd_step(s, GradientBundle({n: np.zeros_like(a) for n, a in s.named_arrays()}), 0.5)
        assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(s.named_arrays(), out.named_arrays()))
        assert out.step == s.step + 1

    def test_analytic_quadratic(self):
        # f(theta) = theta^2 through one scalar weight: grad 2 theta
        s = zero_state(in_dim=1, hidden=1, proj=1, layers=1)
        s.heads[0].b2[0] = 1.0
        theta = Forward(s).tensors["head.0.b2"]
        _, grads = loss_and_grad(s, lambda f: ad.total(ad.mul(f.tensors["head.0.b2"], f.tensors["head.0.b2"])))
        out = sgd_step(s, grads, 0.1)
        assert out.heads[0].b2[0] == pytest.approx(0.8)
        assert theta.data[0] == 1.0

    def test_shape_mismatch(self):
        s = init_state(2)
        with pytest.raises(ValueError):
            sgd_step(s, GradientBundle({"encoder.0.W1": np.zeros((1, 1))}), 0.1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        s = init_state(3, hidden=5, proj_dim=2, num_heads=5, seed=9)
        dist = np.full((5, 5), 0.04)
        path = save_checkpoint(tmp_path / "c.ckpt", s, seed=9, mode="joaov2", arrays={"pair_distribution": dist})
        back, header, extra = load_checkpoint(path)
        assert header["head_count"] == 5 and header["seed"] == 9
        for (n, a), (m, b) in zip(s.named_arrays(), back.named_arrays()):
            assert n == m and a.tobytes() == b.tobytes()
        np.testing.assert_array_equal(extra["pair_distribution"], dist)

    def test_layout(self, tmp_path):
        import json
        import struct
        s = init_state(2, hidden=3, proj_dim=2, num_layers=1)
        raw = save_checkpoint(tmp_path / "c.ckpt", s).read_bytes()
        assert raw[:8] == b"JOAOCKPT"
        (n,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + n])
        first = header["arrays"][0]
        assert first["name"] == "encoder.0.W1" and first["shape"] == [2, 3]
        w = np.frombuffer(raw[16 + n:16 + n + 48], dtype="<f8").reshape(2, 3)
        np.testing.assert_array_equal(w, s.encoder.layers[0].W1)

    def test_corrupted_header(self, tmp_path):
        path = save_checkpoint(tmp_path / "c.ckpt", init_state(2))
        raw = bytearray(path.read_bytes())
        raw[20:24] = b"\xff\xfe{{"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_and_foreign(self, tmp_path):
        path = save_checkpoint(tmp_path / "c.ckpt", init_state(2))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
        (tmp_path / "x").write_bytes(b"hello world, not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x")
