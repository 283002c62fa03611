import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darcnet import model as M
from darcnet import tensor as T
from darcnet.model import ArchConfig, ConfigError
from darcnet.optim import OptimConfig, make_optimizer
from darcnet.tensor import LabelError, ShapeError, Tape, Tensor

from conftest import check_grads, rel_err


def grads_of(params, grids, targets):
    params.zero_grad()
    with Tape() as tape:
        loss = T.softmax_cross_entropy(M.forward(params, grids), targets)
    tape.backward(loss)
    return loss.item(), {n: t.grad.copy() for n, t in params.named()}


class TestAccounting:
    def test_damp_64(self):
        cfg = ArchConfig("damp", 64)
        assert M.expected_param_count(cfg) == 87_552
        assert M.build(cfg, 0).num_params == 87_552

    def test_darc_98(self):
        cfg = ArchConfig("darc", 98)
        assert M.build(cfg, 0).num_params == 87_710
        assert abs(87_710 - 87_910) / 87_910 < 0.005

    def test_shapes(self):
        shapes = M.param_shapes(ArchConfig("damp", 5))
        assert shapes["embed.weight"] == (10, 5)
        assert shapes["conv.weight"] == (5, 5, 3, 3)
        assert shapes["mlp.w"] == (5, 20) and shapes["mlp.w2"] == (20, 5)
        assert "mlp.w" not in M.param_shapes(ArchConfig("darc", 5))

    @pytest.mark.parametrize("bad", [dict(channels=0), dict(channels=-3), dict(arch="lstm"),
                                     dict(colors=11), dict(mlp_expansion=2)])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            ArchConfig(**bad)

    def test_seed_determinism(self):
        a, b = M.build(ArchConfig("damp", 8), 7), M.build(ArchConfig("damp", 8), 7)
        assert a.digest() == b.digest()
        assert a.digest() != M.build(ArchConfig("damp", 8), 8).digest()

    def test_init_scheme(self):
        p = M.build(ArchConfig("damp", 32), 0)
        np.testing.assert_array_equal(p["ln1.gain"].data, 1.0)
        np.testing.assert_array_equal(p["conv.bias"].data, 0.0)
        assert abs(p["conv.weight"].data.std() - 1 / math.sqrt(9 * 32)) < 0.01
        assert abs(p["mlp.w2"].data.std() - 1 / math.sqrt(128)) < 0.01


class TestDepth:
    @pytest.mark.parametrize("hw,n", [((9, 9), 18), ((1, 1), 2), ((5, 30), 60), ((6, 4), 12)])
    def test_depth_for(self, hw, n):
        assert M.depth_for(*hw) == n

    def test_depth_rejects_empty(self):
        with pytest.raises(ShapeError):
            M.depth_for(0, 3)

    def test_iteration_counter(self):
        p = M.build(ArchConfig("darc", 4), 0)
        seen = []
        M.forward(p, np.zeros((1, 6, 4), dtype=int), on_iteration=lambda i, s: seen.append(i))
        assert seen == list(range(12))

    def test_depth_override_agrees(self, rng):
        p = M.build(ArchConfig("damp", 4), 0)
        g = rng.integers(0, 10, size=(2, 3, 5))
        np.testing.assert_array_equal(M.forward(p, g).data, M.forward(p, g, depth=10).data)
        assert not np.array_equal(M.forward(p, g).data, M.forward(p, g, depth=9).data)


class TestForward:
    @given(st.integers(1, 30), st.integers(1, 30), st.sampled_from(M.ARCHS))
    @settings(max_examples=25, deadline=None)
    def test_size_preservation(self, h, w, arch):
        p = M.build(ArchConfig(arch, 2), 0)
        assert M.forward(p, np.zeros((1, h, w), dtype=int)).shape == (1, h, w, 10)

    def test_zero_network(self, rng):
        p = M.build(ArchConfig("damp", 4), 0)
        for t in p:
            t.data[...] = 0.0
        g = rng.integers(0, 10, size=(2, 4, 4))
        out = M.forward(p, g)
        np.testing.assert_array_equal(out.data, 0.0)
        assert abs(T.softmax_cross_entropy(out, g).item() - math.log(10)) < 1e-12

    def test_invalid_inputs(self):
        p = M.build(ArchConfig("darc", 2), 0)
        with pytest.raises(LabelError):
            M.forward(p, np.full((1, 2, 2), 10))
        with pytest.raises(LabelError):
            M.forward(p, np.full((1, 2, 2), -1))
        with pytest.raises(ShapeError):
            M.forward(p, np.zeros((1, 0, 3), dtype=int))

    def test_head_is_transpose_view(self):
        p = M.build(ArchConfig("darc", 3), 0)
        head = p.head()
        p["embed.weight"].data[2, 1] = 99.0
        assert head[1, 2] == 99.0
        assert np.shares_memory(head, p["embed.weight"].data)

    def test_tying_survives_optimizer_steps(self, rng):
        p = M.build(ArchConfig("damp", 4), 0)
        opt = make_optimizer(OptimConfig(), p.named(), M.MATRIX_PARAMS)
        g = rng.integers(0, 10, size=(2, 3, 3))
        for _ in range(3):
            grads_of(p, g, g)
            opt.step(0.01)
        assert np.shares_memory(p.head(), p["embed.weight"].data)
        np.testing.assert_array_equal(p.head(), p["embed.weight"].data.T)

    def test_darc_is_sub_computation_of_damp(self, rng):
        damp = M.build(ArchConfig("damp", 6), 3)
        damp["mlp.w2"].data[...] = 0.0
        damp["mlp.b2"].data[...] = 0.0
        darc = M.build(ArchConfig("darc", 6), 0)
        for name, t in darc.named():
            t.data[...] = damp[name].data
        g = rng.integers(0, 10, size=(2, 4, 5))
        np.testing.assert_allclose(M.forward(damp, g).data, M.forward(darc, g).data, rtol=1e-12, atol=1e-14)

    def test_tied_embedding_gets_both_contributions(self, rng):
        p = M.build(ArchConfig("darc", 4, embed_init_std=0.5), 0)
        g = rng.integers(0, 10, size=(1, 3, 3))
        y = rng.integers(0, 10, size=(1, 3, 3))
        _, grads = grads_of(p, g, y)

        # input path only: head replaced by a constant copy of W^T
        p.zero_grad()
        final = []
        with Tape() as tape:
            M.forward(p, g, on_iteration=lambda i, s: final.append(s))
            stream = final[-1]
            logits = T.linear(stream, Tensor(p["embed.weight"].data.T.copy()))
            loss = T.softmax_cross_entropy(logits, y)
        tape.backward(loss)
        input_path = p["embed.weight"].grad.copy()

        z = logits.data.reshape(-1, 10)
        prob = np.exp(z - z.max(1, keepdims=True))
        prob /= prob.sum(1, keepdims=True)
        dlogits = (prob - np.eye(10)[y.reshape(-1)]) / y.size
        head_path = (stream.data.reshape(-1, 4).T @ dlogits).T

        assert np.abs(head_path).max() > 1e-6 and np.abs(input_path).max() > 1e-6
        np.testing.assert_allclose(grads["embed.weight"], input_path + head_path, rtol=1e-9, atol=1e-12)


class TestGeglu:
    def test_zero_input(self):
        p = M.build(ArchConfig("damp", 3), 0)
        out = M.geglu_mlp(Tensor(np.zeros((2, 3))), p)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_scalar_oracle(self):
        p = M.build(ArchConfig("damp", 1), 0)
        p["mlp.w"].data[...] = 1.0
        p["mlp.v"].data[...] = 1.0
        p["mlp.w2"].data[...] = 1.0
        out = M.geglu_mlp(Tensor([[1.0]]), p).data
        gelu1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert abs(out[0, 0] - 4 * gelu1) < 1e-12
        assert abs(out[0, 0] - 3.36538) < 1e-5

    def test_gradients(self, rng):
        p = M.build(ArchConfig("damp", 3), 0)
        for n in ("mlp.b_w", "mlp.b_v", "mlp.b2"):
            p[n].data[...] = rng.normal(size=p[n].shape)
        x = Tensor(rng.normal(size=(2, 2, 3)), requires_grad=True)
        proj = rng.normal(size=(2, 2, 3))
        leaves = [x] + [p[n] for n in ("mlp.w", "mlp.v", "mlp.w2", "mlp.b_w", "mlp.b_v", "mlp.b2")]
        assert check_grads(lambda: T.sum(T.mask(M.geglu_mlp(x, p), proj)), leaves) < 1e-6


class TestFullModelGradients:
    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_finite_differences(self, arch, rng):
        p = M.build(ArchConfig(arch, 8, embed_init_std=0.5), 11)
        for n, t in p.named():
            if n.endswith((".bias", ".shift", ".b_w", ".b_v", ".b2")):
                t.data[...] = rng.normal(scale=0.1, size=t.shape)
        g = rng.integers(0, 10, size=(1, 4, 4))
        y = rng.integers(0, 10, size=(1, 4, 4))
        err = check_grads(lambda: T.softmax_cross_entropy(M.forward(p, g), y), list(p), eps=1e-5)
        assert err < 1e-4


class TestPacking:
    def _grids(self, rng, shapes):
        return [rng.integers(0, 10, size=s) for s in shapes]

    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_packed_logits_match_per_grid(self, arch, rng):
        p = M.build(ArchConfig(arch, 5, embed_init_std=0.3), 2)
        grids = self._grids(rng, [(3, 5), (4, 4), (2, 2), (5, 1)])
        batch = M.pack(grids)
        packed = batch.unpack(M.forward_packed(p, batch).data)
        for g, z in zip(grids, packed):
            np.testing.assert_allclose(z, M.forward(p, g[None]).data[0], rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_packed_gradients_match_exact_grouping(self, arch, rng):
        p = M.build(ArchConfig(arch, 4, embed_init_std=0.3), 5)
        grids = self._grids(rng, [(3, 4), (3, 4), (2, 5), (4, 2)])
        targets = self._grids(rng, [g.shape for g in grids])
        total = sum(g.size for g in grids)

        p.zero_grad()
        for idx, batch in M.pack_buckets(grids):
            tgt = M.pack([targets[i] for i in idx]).grids
            with Tape() as tape:
                loss = T.softmax_cross_entropy(M.forward_packed(p, batch), tgt,
                                               scale=batch.cells.sum() / total, cell_mask=batch.cells)
            tape.backward(loss)
        packed = {n: t.grad.copy() for n, t in p.named()}

        p.zero_grad()
        for g, y in zip(grids, targets):
            with Tape() as tape:
                loss = T.softmax_cross_entropy(M.forward(p, g[None]), y[None], scale=g.size / total)
            tape.backward(loss)
        for n, t in p.named():
            assert rel_err(packed[n], t.grad) < 1e-10, n

    def test_buckets_cover_every_grid_once(self, rng):
        shapes = [tuple(int(v) for v in rng.integers(1, 29, size=2)) for _ in range(40)]
        buckets = M.pack_buckets(self._grids(rng, shapes))
        seen = sorted(i for idx, _ in buckets for i in idx)
        assert seen == list(range(40))
        for idx, b in buckets:
            assert [shapes[i] for i in idx] == [tuple(e) for e in b.extents]

    def test_predict_matches_argmax(self, rng):
        p = M.build(ArchConfig("damp", 4, embed_init_std=0.5), 0)
        grids = self._grids(rng, [(3, 3), (2, 6), (3, 3)])
        for g, pred in zip(grids, M.predict(p, grids)):
            np.testing.assert_array_equal(pred, M.forward(p, g[None]).data[0].argmax(-1))
