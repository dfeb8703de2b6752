import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simper import ndtensor as nt
from simper.errors import ContractError, DimensionError, NumericDomainError
from simper.ndtensor import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_identity_and_hand_values():
    out = nt.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[3.0], [4.0]]
    assert nt.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nt.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_closed_form_and_finite_differences():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(5, 7))), leaf(rng.normal(size=(7, 3)))
    nt.backward(nt.reduce(nt.matmul(a, b), "sum"))
    np.testing.assert_allclose(a.grad, np.ones((5, 3)) @ b.data.T, rtol=1e-12)
    err = nt.finite_diff_check(lambda: nt.reduce(nt.matmul(a, b), "sum"), [a, b])
    assert err < 1e-6


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(2, 4, 5)))
    assert nt.finite_diff_check(lambda: nt.reduce(nt.matmul(a, b) * nt.matmul(a, b), "sum"), [a, b]) < 1e-6


def test_elementwise_values_and_annihilator():
    assert nt.elementwise(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), "add").data.tolist() == [4.0, 6.0]
    x = leaf([1.0, -2.0, 3.0])
    y = nt.elementwise(x, Tensor(np.zeros(3)), "mul")
    nt.backward(nt.reduce(y, "sum"))
    assert y.data.tolist() == [0.0, 0.0, 0.0]
    assert x.grad.tolist() == [0.0, 0.0, 0.0]


def test_elementwise_rejects_broadcast_beyond_scalar():
    with pytest.raises(DimensionError):
        nt.elementwise(Tensor(np.ones(3)), Tensor(np.ones((2, 3))), "add")
    # rank-0 operands are fine
    assert nt.elementwise(Tensor(np.ones(3)), Tensor(2.0), "mul").data.tolist() == [2.0, 2.0, 2.0]


def test_division_by_zero_is_a_domain_error():
    with pytest.raises(NumericDomainError):
        nt.elementwise(Tensor([1.0, 2.0]), Tensor([1.0, 0.0]), "div")


def test_div_gradient_finite_differences():
    rng = np.random.default_rng(2)
    a, b = leaf(rng.uniform(0.5, 2, 6)), leaf(rng.uniform(0.5, 2, 6))
    assert nt.finite_diff_check(lambda: nt.reduce(a / b, "sum"), [a, b]) < 1e-6


def test_reduce_values_and_max_tie_break():
    assert nt.reduce(Tensor([1.0, 2.0, 3.0]), "sum").item() == 6.0
    x = leaf([2.0, 5.0, 5.0])
    m = nt.reduce(x, "max")
    nt.backward(m)
    assert m.item() == 5.0
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_reduce_mean_gradient_is_uniform():
    x = leaf(np.random.default_rng(3).normal(size=7))
    nt.backward(nt.reduce(x, "mean"))
    np.testing.assert_allclose(x.grad, np.full(7, 1 / 7), rtol=1e-15)
    assert nt.finite_diff_check(lambda: nt.reduce(x, "mean"), [x]) < 1e-6


def test_reduce_empty_axis_and_bad_axis():
    with pytest.raises(DimensionError):
        nt.reduce(Tensor(np.zeros((0, 3))), "sum", axis=0)
    with pytest.raises(DimensionError):
        nt.reduce(Tensor(np.zeros((2, 3))), "sum", axis=2)


def test_nonlinearity_basics():
    assert nt.nonlinearity(Tensor(0.0), "tanh").item() == 0.0
    x = leaf([-1.0, 0.0, 2.0])
    y = nt.nonlinearity(x, "relu")
    nt.backward(nt.reduce(y, "sum"))
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_tanh_gradient_finite_differences():
    x = leaf(np.random.default_rng(4).uniform(-2, 2, 9))
    assert nt.finite_diff_check(lambda: nt.reduce(nt.nonlinearity(x, "tanh"), "sum"), [x]) < 1e-6


def test_backward_scalar_contract_and_accumulation():
    x = leaf([1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        nt.backward(x * 2.0)
    nt.backward(nt.reduce(x, "sum"))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    nt.backward(nt.reduce(x, "sum"))
    assert x.grad.tolist() == [2.0, 2.0, 2.0]
    nt.zero_grad([x])
    y = leaf([1.0, 2.0])
    nt.backward(nt.reduce(y * y, "sum"))
    assert y.grad.tolist() == [2.0, 4.0]


def test_tape_is_topological_and_visits_each_node_once():
    x = leaf([1.0, 2.0])
    h = x * x
    root = nt.reduce(h + h, "sum")
    tape = nt.build_tape(root)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes)
    for n in tape.nodes:
        for p in n._parents:
            assert pos[id(p)] < pos[id(n)]
    nt.backward(root)
    assert x.grad.tolist() == [4.0, 8.0]


def test_tape_linearity():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=6))

    def f():
        return nt.reduce(nt.nonlinearity(x, "tanh") * x, "sum")

    def g():
        return nt.reduce(nt.nonlinearity(x * x, "exp"), "mean")

    nt.backward(f())
    gf = x.grad.copy()
    nt.zero_grad([x])
    nt.backward(g())
    gg = x.grad.copy()
    nt.zero_grad([x])
    nt.backward(f() + g())
    np.testing.assert_allclose(x.grad, gf + gg, atol=1e-12, rtol=0)


def test_finite_diff_check_quadratic_and_linear():
    x = leaf(3.0)
    assert nt.finite_diff_check(lambda: x * x, [x], h=1e-5) < 1e-8
    y = leaf([0.3, -1.2])
    assert nt.finite_diff_check(lambda: nt.reduce(y * 2.5, "sum"), [y]) < 1e-9


def test_finite_diff_check_rejects_non_finite():
    x = leaf(0.0)
    with pytest.raises(NumericDomainError):
        nt.finite_diff_check(lambda: nt.nonlinearity(x - 1.0, "log"), [x])


def test_log_softmax_matches_reference_and_gradient():
    rng = np.random.default_rng(6)
    x = leaf(rng.normal(size=(3, 5)) * 10)
    y = nt.log_softmax(x, axis=1)
    ref = x.data - x.data.max(axis=1, keepdims=True)
    ref = ref - np.log(np.exp(ref).sum(axis=1, keepdims=True))
    np.testing.assert_allclose(y.data, ref, atol=1e-12)
    w = Tensor(rng.normal(size=(3, 5)))
    assert nt.finite_diff_check(lambda: nt.reduce(nt.log_softmax(x, axis=1) * w, "sum"), [x]) < 1e-6


def test_shape_ops_gradients():
    rng = np.random.default_rng(7)
    x = leaf(rng.normal(size=(2, 3)))
    w = Tensor(rng.normal(size=(4, 3, 2)))

    def f():
        e = nt.expand(nt.reshape(nt.transpose(x), (1, 3, 2)), (4, 3, 2))
        c = nt.concat([e, e * 2.0], axis=0)
        return nt.reduce(nt.take(c, (slice(0, 4),)) * w, "sum")

    assert nt.finite_diff_check(f, [x]) < 1e-6


def test_determinism_bit_identical():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 6))

    def run():
        t = leaf(a)
        out = nt.reduce(nt.nonlinearity(nt.matmul(t, t), "tanh"), "sum")
        nt.backward(out)
        return out.item(), t.grad.tobytes()

    assert run() == run()


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(9)
    params = {"W0": rng.normal(size=(3, 4)), "b0": np.zeros(4), "s": np.array(1.5)}
    nt.save_checkpoint(tmp_path / "a", params, {"seed": 3})
    loaded, meta = nt.load_checkpoint(tmp_path / "a")
    assert meta == {"seed": "3"}
    for k, v in params.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()
    nt.save_checkpoint(tmp_path / "b", loaded, meta)
    for name in ("manifest.txt", "params.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        nt.load_checkpoint(tmp_path / "nope")


# the floor keeps roundoff-sized gradients from dominating the relative error


def _away_from_zero(a):
    return np.where(np.abs(a) < 1e-3, 0.5, a)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, 6, elements=st.floats(-2, 2)),
    arrays(np.float64, 6, elements=st.floats(-2, 2)),
    st.sampled_from(["add", "sub", "mul", "div"]),
)
def test_elementwise_gradients_property(a, b, kind):
    if kind == "div":
        b = np.where(np.abs(b) < 0.3, 1.0, b)
    x, y = leaf(a), leaf(b)
    assert nt.finite_diff_check(lambda: nt.reduce(nt.elementwise(x, y, kind) * nt.elementwise(x, y, kind), "sum"), [x, y], floor=1e-3) < 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-2, 2)), st.sampled_from(["tanh", "relu"]))
def test_nonlinearity_gradients_property(a, kind):
    x = leaf(_away_from_zero(a))
    w = Tensor(np.linspace(-1, 1, 8))
    assert nt.finite_diff_check(lambda: nt.reduce(nt.nonlinearity(x, kind) * w, "sum"), [x], floor=1e-3) < 1e-4
