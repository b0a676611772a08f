import json

import numpy as np
import pytest

import so3kit.autodiff as ad
from gradcheck import check_op
from so3kit.autodiff import SGD, Adam, Parameter, Tensor, backward, load_checkpoint, no_grad, save_checkpoint
from so3kit.errors import ShapeError
from so3kit.harness.oracles import finite_diff_grad

TOL = 1e-5


def rand(seed, *shape):
    return np.random.default_rng(seed).normal(size=shape)


def away_from_zero(seed, *shape):
    x = rand(seed, *shape)
    return x + np.sign(x) * 0.1


SEGMENTS = [np.array([0, 1, 1, 2, 2, 2]), np.array([1, 0, 1, 0]), np.array([0, 0, 0, 3, 3])]

# op name -> list of (function, input arrays) on three shapes each
CASES = {
    "add": [(ad.add, (rand(0, 3), rand(1, 3))), (ad.add, (rand(2, 2, 4), rand(3, 4))),
            (ad.add, (rand(4, 3, 1, 2), rand(5, 1, 5, 2)))],
    "sub": [(ad.sub, (rand(0, 4), rand(1, 4))), (ad.sub, (rand(2, 3, 2), rand(3, 3, 1))),
            (ad.sub, (rand(4, 2, 2, 2), rand(5, 2)))],
    "mul": [(ad.mul, (rand(0, 5), rand(1, 5))), (ad.mul, (rand(2, 3, 4), rand(3, 1, 4))),
            (ad.mul, (rand(4, 2, 3, 1), rand(5, 3, 2)))],
    "div": [(ad.div, (rand(0, 4), away_from_zero(1, 4) + 3)), (ad.div, (rand(2, 2, 3), away_from_zero(3, 3))),
            (ad.div, (rand(4, 2, 1, 3), away_from_zero(5, 2, 1)))],
    "scale": [(lambda a: ad.scale(a, -2.5), (rand(i, *s),)) for i, s in enumerate([(3,), (2, 5), (2, 2, 2)])],
    "matmul": [(ad.matmul, (rand(0, 4, 5), rand(1, 5, 3))), (ad.matmul, (rand(2, 2, 3, 4), rand(3, 4, 2))),
               (ad.matmul, (rand(4, 3, 1, 2, 2), rand(5, 4, 2, 3)))],
    "einsum": [(lambda a, b: ad.einsum("ij,jk->ik", a, b), (rand(0, 3, 4), rand(1, 4, 2))),
               (lambda a, b: ad.einsum("eoi,eij->eoj", a, b), (rand(2, 5, 2, 3), rand(3, 5, 3, 4))),
               (lambda a, b: ad.einsum("abc,cd->dba", a, b), (rand(4, 2, 3, 4), rand(5, 4, 2)))],
    "contract": [(lambda a, b: ad.contract(a, b, 1, 0), (rand(0, 3, 4), rand(1, 4, 2))),
                 (lambda a, b: ad.contract(a, b, 0, 2), (rand(2, 3, 2), rand(3, 2, 2, 3))),
                 (lambda a, b: ad.contract(a, b, 2, 1), (rand(4, 1, 2, 5), rand(5, 3, 5)))],
    "concat": [(lambda a, b: ad.concat([a, b], 0), (rand(0, 2), rand(1, 3))),
               (lambda a, b: ad.concat([a, b], 1), (rand(2, 2, 3), rand(3, 2, 1))),
               (lambda a, b: ad.concat([a, b, a], -1), (rand(4, 2, 2, 2), rand(5, 2, 2, 1)))],
    "getitem": [(lambda a: a[1:3], (rand(0, 5),)), (lambda a: a[:, [0, 2, 0]], (rand(1, 2, 3),)),
                (lambda a: a[np.array([2, 2, 0])], (rand(2, 3, 2, 2),))],
    "reshape": [(lambda a: a.reshape(2, 3), (rand(0, 6),)), (lambda a: a.reshape(-1), (rand(1, 2, 3),)),
                (lambda a: a.reshape(4, 1, 3), (rand(2, 2, 2, 3),))],
    "transpose": [(lambda a: a.transpose(), (rand(0, 3, 4),)), (lambda a: a.transpose(2, 0, 1), (rand(1, 2, 3, 4),)),
                  (lambda a: a.transpose(1, 3, 0, 2), (rand(2, 2, 3, 1, 2),))],
    "sum": [(lambda a: a.sum(), (rand(0, 4),)), (lambda a: a.sum(axis=1), (rand(1, 2, 3),)),
            (lambda a: a.sum(axis=(0, 2), keepdims=True), (rand(2, 2, 3, 4),))],
    "mean": [(lambda a: a.mean(), (rand(0, 4),)), (lambda a: a.mean(axis=0), (rand(1, 3, 2),)),
             (lambda a: a.mean(axis=-1, keepdims=True), (rand(2, 2, 2, 5),))],
    "relu": [(ad.relu, (away_from_zero(i, *s),)) for i, s in enumerate([(6,), (3, 4), (2, 2, 3)])],
    "leaky_relu": [(lambda a: ad.leaky_relu(a, 0.2), (away_from_zero(i, *s),))
                   for i, s in enumerate([(6,), (3, 4), (2, 2, 3)])],
    "exp": [(ad.exp, (rand(i, *s),)) for i, s in enumerate([(4,), (2, 3), (2, 1, 3)])],
    "log": [(ad.log, (np.abs(rand(i, *s)) + 0.5,)) for i, s in enumerate([(4,), (2, 3), (2, 1, 3)])],
    "sqrt": [(ad.sqrt, (np.abs(rand(i, *s)) + 0.5,)) for i, s in enumerate([(4,), (2, 3), (2, 1, 3)])],
    "square": [(ad.square, (rand(i, *s),)) for i, s in enumerate([(4,), (2, 3), (2, 1, 3)])],
    "clamp_min": [(lambda a: ad.clamp_min(a, 0.05), (away_from_zero(i, *s),))
                  for i, s in enumerate([(6,), (3, 4), (2, 2, 3)])],
    "sign_clamp": [(lambda a: ad.sign_clamp(a, 0.05), (away_from_zero(i, *s) * 3,))
                   for i, s in enumerate([(6,), (3, 4), (2, 2, 3)])],
    "l2_norm": [(ad.l2_norm, (rand(0, 3),)), (ad.l2_norm, (rand(1, 4, 3),)),
                (lambda a: ad.l2_norm(a, keepdims=True), (rand(2, 2, 3, 5),))],
    "layer_norm": [(ad.layer_norm, (rand(i, *s),)) for i, s in enumerate([(5,), (3, 4), (2, 3, 6)])],
    "softmax": [(ad.softmax, (rand(0, 4),)), (lambda a: ad.softmax(a, 0), (rand(1, 3, 2),)),
                (ad.softmax, (rand(2, 2, 2, 5),))],
    "segment_sum": [(lambda a, s=s: ad.segment_sum(a, s, s.max() + 1), (rand(i, len(s), 2),))
                    for i, s in enumerate(SEGMENTS)],
    "segment_mean": [(lambda a, s=s: ad.segment_mean(a, s, s.max() + 2), (rand(i, len(s), 3),))
                     for i, s in enumerate(SEGMENTS)],
    "segment_max": [(lambda a, s=s: ad.segment_max(a, s, s.max() + 1), (rand(i, len(s), 2),))
                    for i, s in enumerate(SEGMENTS)],
    "segment_softmax": [(lambda a, s=s: ad.segment_softmax(a, s, s.max() + 1), (rand(i, len(s), 2),))
                        for i, s in enumerate(SEGMENTS)],
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_matches_finite_differences(name):
    assert len(CASES[name]) >= 3
    for fn, arrays in CASES[name]:
        assert check_op(fn, *arrays) <= TOL, name


def test_matmul_gradient_on_reference_shapes():
    assert check_op(ad.matmul, rand(7, 4, 5), rand(8, 5, 3)) <= 1e-6


class TestForwardValues:
    def test_relu_gradient_values(self):
        x = Parameter([-1.0, 2.0], name="x")
        assert np.array_equal(backward(ad.relu(x).sum(), [x])["x"], [0.0, 1.0])

    def test_singleton_segment_softmax_is_one(self):
        out = ad.segment_softmax(Tensor([[0.3], [1.0], [-2.0]]), [0, 1, 1], 2)
        assert out.data[0, 0] == 1.0

    def test_segment_softmax_sums_to_one(self):
        seg = np.array([0, 2, 2, 1, 2, 0, 0])
        out = ad.segment_softmax(Tensor(rand(3, 7, 4) * 30), seg, 3).data
        sums = np.zeros((3, 4))
        np.add.at(sums, seg, out)
        assert np.abs(sums - 1).max() <= 1e-12

    def test_layer_norm_statistics(self):
        out = ad.layer_norm(Tensor(rand(4, 50, 16) * 7 + 3)).data
        assert np.abs(out.mean(axis=-1)).max() <= 1e-12
        assert np.abs(out.var(axis=-1) - 1).max() <= 1e-10

    def test_segment_mean_empty_segment(self):
        out = ad.segment_mean(Tensor(np.ones((2, 3))), [0, 0], 2).data
        assert np.array_equal(out, [[1, 1, 1], [0, 0, 0]])

    def test_segment_max_ties_credit_first(self):
        x = Parameter([[1.0], [1.0], [0.5]], name="x")
        g = backward(ad.segment_max(x, [0, 0, 0], 1).sum(), [x])["x"]
        assert np.array_equal(g, [[1.0], [0.0], [0.0]])

    def test_l2_norm_clamps_at_zero(self):
        x = Parameter(np.zeros((1, 3)), name="x")
        out = ad.l2_norm(x, eps=1e-6)
        assert out.data[0] == 1e-6
        assert np.array_equal(backward(out.sum(), [x])["x"], np.zeros((1, 3)))

    def test_sign_clamp_keeps_sign(self):
        out = ad.sign_clamp(Tensor([-1e-20, 0.0, 3e-13, -2.0]), 1e-12).data
        assert np.array_equal(out, [-1e-12, 0.0, 1e-12, -2.0])


class TestBackward:
    def test_sum_of_squares(self):
        x = Parameter(rand(0, 5), name="x")
        assert np.allclose(backward((x * x).sum(), [x])["x"], 2 * x.data, rtol=0, atol=1e-15)

    def test_layer_norm_sum_has_zero_gradient(self):
        # the output rows always sum to zero, so both gradients must vanish
        x = Parameter(rand(1, 3, 6), name="x")
        analytic = backward(ad.layer_norm(x).sum(), [x])["x"]
        numeric = finite_diff_grad(lambda: float(ad.layer_norm(Tensor(x.data)).data.sum()), [x])["x"]
        assert np.abs(analytic).max() < 1e-12 and np.abs(numeric).max() < 1e-9

    def test_disconnected_parameter_gets_zeros(self):
        x, y = Parameter(rand(0, 3), name="x"), Parameter(rand(1, 2, 2), name="y")
        grads = backward((x * 2.0).sum(), [x, y])
        assert np.array_equal(grads["y"], np.zeros((2, 2)))

    def test_shared_parameter_accumulates(self):
        x = Parameter([1.0, 2.0], name="x")
        assert np.array_equal(backward((x * x + x).sum(), [x])["x"], [3.0, 5.0])

    def test_default_collects_reached_parameters(self):
        x, y = Parameter([1.0], name="x"), Parameter([2.0], name="y")
        assert set(backward((x * 3.0).sum())) == {"x"}
        del y

    def test_second_call_raises(self):
        x = Parameter([1.0], name="x")
        loss = (x * x).sum()
        backward(loss, [x])
        with pytest.raises(RuntimeError):
            backward(loss, [x])

    def test_non_scalar_loss_rejected(self):
        x = Parameter([1.0, 2.0], name="x")
        with pytest.raises(ShapeError):
            backward(x * 2.0, [x])

    def test_no_grad_records_nothing(self):
        x = Parameter([1.0], name="x")
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_deterministic(self):
        def grads():
            x = Parameter(rand(0, 40, 3), name="x")
            seg = np.random.default_rng(1).integers(0, 5, size=40)
            return backward(ad.segment_softmax(x, seg, 5).sum() + ad.segment_sum(x * x, seg, 5).sum(), [x])["x"]

        assert grads().tobytes() == grads().tobytes()


class TestShapeErrors:
    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
    def test_elementwise_names_shapes(self, op):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
            op(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_matmul(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_einsum(self):
        with pytest.raises(ShapeError, match="einsum"):
            ad.einsum("ij,jk->ik", Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))

    def test_reshape(self):
        with pytest.raises(ShapeError, match="reshape"):
            ad.reshape(Tensor(np.ones(5)), (2, 3))

    def test_segment_ids(self):
        with pytest.raises(ShapeError, match="segment"):
            ad.segment_sum(Tensor(np.ones((3, 2))), [0, 1], 2)


class TestOptimizers:
    def test_sgd_step(self):
        p = Parameter([1.0], name="p")
        SGD([p], lr=0.1).step({"p": np.array([2.0])})
        assert p.data[0] == pytest.approx(0.8, abs=1e-15)

    @pytest.mark.parametrize("g", [1e-4, 1.0, 1e4])
    def test_adam_first_step_is_lr(self, g):
        p = Parameter([0.0], name="p")
        Adam([p], lr=1e-3).step({"p": np.array([g])})
        assert p.data[0] == pytest.approx(-1e-3, rel=1e-4)

    def test_shape_mismatch(self):
        p = Parameter(np.zeros(3), name="p")
        with pytest.raises(ShapeError):
            Adam([p]).step({"p": np.zeros(2)})

    def test_frozen_parameters_skipped(self):
        p = Parameter([1.0], name="p", trainable=False)
        SGD([p], lr=1.0).step({"p": np.array([1.0])})
        assert p.data[0] == 1.0

    def test_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(0)
            w = Parameter(rng.normal(size=(4, 3)), name="w")
            x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 3))
            opt = Adam([w], lr=1e-2)
            for _ in range(100):
                loss = ad.square(ad.matmul(Tensor(x), w) - y).mean()
                opt.step(backward(loss, [w]))
            return w.data.tobytes()

        assert run() == run()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = [Parameter(rng.normal(size=(3, 2)), name="a.w"), Parameter(rng.normal(size=4), name="a.b")]
        opt = Adam(params, lr=5e-3)
        for _ in range(3):
            opt.step({p.name: rng.normal(size=p.shape) for p in params})
        save_checkpoint(tmp_path / "ck.json", params, opt, {"epoch": 3})
        arrays, state, meta = load_checkpoint(tmp_path / "ck.json")
        assert meta == {"epoch": 3}
        for p in params:
            assert arrays[p.name].tobytes() == p.data.tobytes()
        fresh = Adam([Parameter(np.zeros(p.shape), name=p.name) for p in params])
        fresh.load_state_dict(state)
        assert fresh.t == 3 and fresh.lr == 5e-3
        assert fresh.m["a.w"].tobytes() == opt.m["a.w"].tobytes()

    def test_blob_is_little_endian_float64(self, tmp_path):
        save_checkpoint(tmp_path / "ck.json", [Parameter([1.5, -2.0], name="x")])
        manifest = json.loads((tmp_path / "ck.json").read_text())
        assert manifest["version"] == 1 and manifest["byteorder"] == "little"
        assert (tmp_path / "ck.bin").read_bytes() == np.array([1.5, -2.0], dtype="<f8").tobytes()

    def test_rejects_other_version(self, tmp_path):
        save_checkpoint(tmp_path / "ck.json", [Parameter([1.0], name="x")])
        doc = json.loads((tmp_path / "ck.json").read_text())
        doc["version"] = 2
        (tmp_path / "ck.json").write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(tmp_path / "ck.json")
