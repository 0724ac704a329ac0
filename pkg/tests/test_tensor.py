"""Tensor engine: forward semantics, error contracts, FD gradient oracles."""

import numpy as np
import pytest

from promptclip import tensor as T
from promptclip.errors import DegenerateInputError, GraphError, NumericError, ShapeError
from promptclip.gradcheck import EPS, REL_TOL, check_op

TRIALS = 20


@pytest.fixture(autouse=True)
def fresh_graph():
    T.reset_graph()
    yield
    T.reset_graph()


class TestForward:
    def test_matmul_identity(self):
        a = np.random.default_rng(0).normal(size=(3, 3))
        out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_matmul_hand_case(self):
        out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))

    def test_softmax_symmetry(self):
        out = T.softmax_rows(T.Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_softmax_large_magnitude_no_overflow(self):
        out = T.softmax_rows(T.Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-300)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(TRIALS):
            x = rng.uniform(-1e3, 1e3, size=(4, 7))
            y = T.softmax_rows(T.Tensor(x)).data
            assert np.all(y >= 0)
            np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_nan_input_rejected(self):
        with pytest.raises(NumericError):
            T.softmax_rows(T.Tensor([[np.nan, 0.0]]))

    def test_layer_norm_constant_vector_is_zero(self):
        out = T.layer_norm(T.Tensor(np.full(8, 3.7)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-9)

    def test_layer_norm_standardized_vector_unchanged(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=16)
        x = (x - x.mean()) / x.std()
        out = T.layer_norm(T.Tensor(x), eps=1e-5)
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_tanh_exp_at_zero(self):
        assert T.tanh(T.Tensor([0.0])).data[0] == 0.0
        assert T.exp(T.Tensor([0.0])).data[0] == 1.0

    def test_log_rejects_non_positive(self):
        with pytest.raises(NumericError):
            T.log(T.Tensor([0.0]))
        with pytest.raises(NumericError):
            T.log(T.Tensor([-1.0]))

    def test_concat_with_empty_is_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        out = T.concat_cols(T.Tensor(x), T.Tensor(np.zeros((3, 0))))
        np.testing.assert_array_equal(out.data, x)

    def test_concat_shapes(self):
        out = T.concat_cols(T.Tensor(np.zeros((4, 2))), T.Tensor(np.ones((4, 3))))
        assert out.data.shape == (4, 5)

    def test_concat_leading_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_cols(T.Tensor(np.zeros((4, 2))), T.Tensor(np.zeros((3, 2))))

    def test_concat_split_round_trip(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(5, 2)), rng.normal(size=(5, 4))
        out = T.concat_cols(T.Tensor(a), T.Tensor(b))
        np.testing.assert_array_equal(out.data[:, :2], a)
        np.testing.assert_array_equal(out.data[:, 2:], b)

    def test_l2_normalize_hand_case(self):
        out = T.l2_normalize(T.Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8])

    def test_l2_normalize_unit_vector_unchanged(self):
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(T.l2_normalize(T.Tensor(v)).data, v)

    def test_l2_normalize_output_norm(self):
        rng = np.random.default_rng(4)
        for _ in range(TRIALS):
            v = rng.normal(size=9)
            out = T.l2_normalize(T.Tensor(v))
            assert abs(np.linalg.norm(out.data) - 1.0) < 1e-9

    def test_l2_normalize_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            T.l2_normalize(T.Tensor(np.zeros(4)))


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        T.backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_unused_input_gets_zero_grad(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = T.Tensor(np.ones(3), requires_grad=True)
        _dead_end = T.tanh(x)
        T.backward(T.sum_all(T.exp(y)))
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            T.backward(T.tanh(x))

    def test_stale_epoch_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        loss = T.sum_all(x)
        T.reset_graph()
        with pytest.raises(GraphError):
            T.backward(loss)

    def test_backward_deterministic(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))

        def run():
            T.reset_graph()
            ta = T.Tensor(a, requires_grad=True)
            tb = T.Tensor(b, requires_grad=True)
            T.backward(T.sum_all(T.tanh(T.matmul(ta, tb))))
            return ta.grad.copy(), tb.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])

    def test_concat_backward_distributes_ones(self):
        a = T.Tensor(np.zeros((2, 2)), requires_grad=True)
        b = T.Tensor(np.zeros((2, 3)), requires_grad=True)
        T.backward(T.sum_all(T.concat_cols(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 2)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 3)))

    def test_take_rows_accumulates_duplicates(self):
        table = T.Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
        out = T.take_rows(table, [1, 1, 3])
        T.backward(T.sum_all(out))
        expected = np.zeros((4, 2))
        expected[1] = 2.0
        expected[3] = 1.0
        np.testing.assert_array_equal(table.grad, expected)


def _fd_case(name, build, shapes, trials=TRIALS, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        params = {k: rng.normal(size=s) for k, s in shapes.items()}
        report = check_op(build, params)
        worst = max(worst, max(report.values()))
    assert worst < REL_TOL, f"{name}: max relative error {worst:.2e}"


class TestGradOracles:
    """Each differentiable op against central finite differences."""

    def test_matmul(self):
        _fd_case(
            "matmul",
            lambda p: T.sum_all(T.tanh(T.matmul(p["a"], p["b"]))),
            {"a": (3, 4), "b": (4, 2)},
        )

    def test_softmax_rows(self):
        _fd_case(
            "softmax_rows",
            lambda p: T.sum_all(T.mul(T.softmax_rows(p["x"]), p["w"])),
            {"x": (4, 5), "w": (4, 5)},
            seed=1,
        )

    def test_log_softmax_rows(self):
        _fd_case(
            "log_softmax_rows",
            lambda p: T.sum_all(T.mul(T.log_softmax_rows(p["x"]), p["w"])),
            {"x": (4, 5), "w": (4, 5)},
            seed=2,
        )

    def test_layer_norm(self):
        _fd_case(
            "layer_norm",
            lambda p: T.sum_all(T.mul(T.layer_norm(p["x"]), p["w"])),
            {"x": (3, 6), "w": (3, 6)},
            seed=3,
        )

    def test_elementwise_composition(self):
        _fd_case(
            "sum tanh(Wx)",
            lambda p: T.sum_all(T.tanh(T.matmul(p["w"], p["x"]))),
            {"w": (4, 3), "x": (3, 1)},
            seed=4,
        )

    def test_exp_log_chain(self):
        _fd_case(
            "log(exp)",
            lambda p: T.sum_all(T.log(T.exp(p["x"]))),
            {"x": (2, 3)},
            seed=5,
        )

    def test_l2_normalize(self):
        _fd_case(
            "l2_normalize",
            lambda p: T.sum_all(T.mul(T.l2_normalize(p["v"]), p["w"])),
            {"v": (6,), "w": (6,)},
            seed=6,
        )

    def test_concat_cols(self):
        _fd_case(
            "concat_cols",
            lambda p: T.sum_all(T.tanh(T.concat_cols(p["a"], p["b"]))),
            {"a": (3, 2), "b": (3, 4)},
            seed=7,
        )

    def test_scale_add_mul(self):
        _fd_case(
            "scale/add/mul mix",
            lambda p: T.sum_all(T.add(T.scale(p["a"], 2.5), T.mul(p["a"], p["b"]))),
            {"a": (3, 3), "b": (3, 3)},
            seed=8,
        )

    def test_scalar_broadcast(self):
        _fd_case(
            "scalar tensor broadcast",
            lambda p: T.sum_all(T.mul(p["x"], p["s"])),
            {"x": (4, 4), "s": (1,)},
            seed=9,
        )

    def test_clamp_interior(self):
        _fd_case(
            "clamp (interior)",
            lambda p: T.sum_all(T.clamp(p["x"], -50.0, 50.0)),
            {"x": (3, 3)},
            seed=10,
        )

    def test_transpose_mean_rows(self):
        _fd_case(
            "transpose + mean_rows",
            lambda p: T.sum_all(T.tanh(T.mean_rows(T.transpose(p["x"])))),
            {"x": (3, 5)},
            seed=11,
        )

    def test_stack_rows(self):
        def build(p):
            stacked = T.stack_rows([T.tanh(p["a"]), T.tanh(p["b"])])
            return T.sum_all(T.softmax_rows(stacked))

        _fd_case("stack_rows", build, {"a": (4,), "b": (4,)}, seed=12)

    def test_take_rows(self):
        def build(p):
            rows = T.take_rows(p["table"], [0, 2, 2, 1])
            return T.sum_all(T.tanh(rows))

        _fd_case("take_rows", build, {"table": (4, 3)}, seed=13)
