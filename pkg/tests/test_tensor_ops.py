import numpy as np
import pytest

from pswa.errors import DimensionError, NumericsError, UsageError
from pswa.numerics import (
    Rng,
    Tensor,
    dump_tensor,
    gradcheck,
    load_tensor,
    no_grad,
    ops,
    set_debug_checks,
    set_default_dtype,
    zeros,
)
from pswa.numerics.flops import count_flops


# ---------------------------------------------------------------------------
# tensor basics
# ---------------------------------------------------------------------------

def test_tensor_defaults_to_f64_contiguous():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.data.flags["C_CONTIGUOUS"]
    assert t.shape == (2, 2)
    assert not t.requires_grad


def test_f32_optin_via_default_dtype():
    set_default_dtype("f32")
    t = Tensor(np.ones(3))
    assert t.data.dtype == np.float32
    set_default_dtype("f64")


def test_non_finite_construction_rejected():
    with pytest.raises(NumericsError):
        Tensor([1.0, np.inf])
    with pytest.raises(NumericsError):
        Tensor([np.nan])


def test_debug_checks_catch_overflow_in_ops():
    big = Tensor([1e308])
    with np.errstate(over="ignore"):
        with pytest.raises(NumericsError):
            ops.mul(big, big)
        set_debug_checks(False)
        out = ops.mul(big, big)  # allowed when checks are off
    assert np.isinf(out.data[0])
    set_debug_checks(True)


def test_assign_only_on_leaves():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = ops.mul(a, a)
    with pytest.raises(UsageError):
        b.assign_([0.0, 0.0])
    a.assign_([5.0, 6.0])
    assert a.data.tolist() == [5.0, 6.0]
    with pytest.raises(DimensionError):
        a.assign_([1.0, 2.0, 3.0])


def test_backward_requires_scalar_without_seed():
    a = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.mul(a, a)
    with pytest.raises(UsageError):
        y.backward()
    y.backward(seed=np.ones(2))
    np.testing.assert_array_equal(a.grad, [2.0, 4.0])


def test_diamond_graph_accumulates_both_paths():
    x = Tensor([3.0], requires_grad=True)
    y = ops.add(ops.mul(x, x), ops.mul(x, x))  # 2x^2, dy/dx = 4x
    y.backward(seed=np.ones(1))
    np.testing.assert_allclose(x.grad, [12.0])


def test_non_participating_input_has_no_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 2)))  # constant
    out = ops.sum_(ops.mul(a, b))
    out.backward()
    assert b.grad is None
    np.testing.assert_array_equal(a.grad, np.ones((2, 2)))


def test_no_grad_suppresses_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(a, a)
    assert y.node is None
    assert not y.requires_grad


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------

def test_matmul_matches_numpy(np_rng):
    for _ in range(20):
        a = np_rng.normal(size=(2, 3, 4))
        b = np_rng.normal(size=(4, 5))
        out = ops.matmul(Tensor(a), Tensor(b))
        np.testing.assert_array_equal(out.data, a @ b)


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_softmax_rows_sum_to_one(np_rng):
    x = np_rng.normal(size=(6, 9)) * 5
    y = ops.softmax_rows(Tensor(x))
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(6), atol=1e-15)
    assert (y.data > 0).all()


def test_softmax_invariant_to_row_shift(np_rng):
    x = np_rng.normal(size=(4, 7))
    shifted = x + np_rng.normal(size=(4, 1)) * 100
    a = ops.softmax_rows(Tensor(x)).data
    b = ops.softmax_rows(Tensor(shifted)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_stable_at_large_logits():
    y = ops.softmax_rows(Tensor([[1000.0, 1000.0, -1000.0]]))
    np.testing.assert_allclose(y.data, [[0.5, 0.5, 0.0]], atol=1e-12)


def test_layernorm_moments(np_rng):
    x = np_rng.normal(size=(5, 8)) * 3 + 7
    y = ops.layernorm(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-5)  # eps-limited


def test_layernorm_affine_applies_after_normalization(np_rng):
    x = np_rng.normal(size=(3, 4))
    gamma = Tensor(np.array([2.0, 2.0, 2.0, 2.0]))
    beta = Tensor(np.array([1.0, 1.0, 1.0, 1.0]))
    plain = ops.layernorm(Tensor(x)).data
    affine = ops.layernorm(Tensor(x), gamma, beta).data
    np.testing.assert_allclose(affine, plain * 2 + 1, atol=1e-15)


def test_gelu_silu_fixed_points():
    x = Tensor([0.0])
    assert ops.gelu(x).data[0] == 0.0
    assert ops.silu(x).data[0] == 0.0
    # large positive ~ identity, large negative ~ zero
    big = Tensor([20.0, -20.0])
    np.testing.assert_allclose(ops.gelu(big).data, [20.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(ops.silu(big).data, [20.0, 0.0], atol=1e-7)


def test_depthwise_unit_kernel_is_bitexact_identity(np_rng):
    x = np_rng.normal(size=(2, 4, 5, 6))
    k = np.ones((4, 1, 1))
    out = ops.depthwise_conv2d(Tensor(x), Tensor(k))
    assert (out.data == x).all()


def test_depthwise_matches_brute_loops(np_rng):
    from oracles import brute_depthwise_conv

    for k in (1, 3, 5):
        x = np_rng.normal(size=(2, 3, 6, 7))
        kernels = np_rng.normal(size=(3, k, k))
        fast = ops.depthwise_conv2d(Tensor(x), Tensor(kernels)).data
        slow = brute_depthwise_conv(x, kernels)
        np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_depthwise_rejects_even_kernel(np_rng):
    from pswa.errors import ConfigurationError

    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ConfigurationError):
        ops.depthwise_conv2d(x, Tensor(np.ones((2, 2, 2))))


def test_pointwise_matches_loop(np_rng):
    x = np_rng.normal(size=(2, 3, 4, 4))
    w = np_rng.normal(size=(5, 3))
    b = np_rng.normal(size=5)
    out = ops.pointwise_conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.zeros((2, 5, 4, 4))
    for o in range(5):
        for i in range(3):
            ref[:, o] += w[o, i] * x[:, i]
        ref[:, o] += b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_narrow_supports_zero_length():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    empty = ops.narrow(x, 1, 2, 0)
    assert empty.shape == (3, 0)
    rest = ops.narrow(x, 1, 1, 2)
    np.testing.assert_array_equal(rest.data, x.data[:, 1:3])


def test_concat_roundtrips_with_narrow(np_rng):
    x = np_rng.normal(size=(2, 5))
    t = Tensor(x)
    parts = [ops.narrow(t, 1, 0, 2), ops.narrow(t, 1, 2, 0), ops.narrow(t, 1, 2, 3)]
    back = ops.concat(parts, axis=1)
    assert (back.data == x).all()


def test_gather_rows_and_last(np_rng):
    table = np_rng.normal(size=(3, 7))
    idx = np.array([2, 0, 2])
    np.testing.assert_array_equal(ops.gather_rows(Tensor(table), idx).data, table[idx])
    jdx = np.array([6, 0, 3, 3])
    np.testing.assert_array_equal(ops.gather_last(Tensor(table), jdx).data, table[:, jdx])
    with pytest.raises(DimensionError):
        ops.gather_rows(Tensor(table), np.array([3]))


# ---------------------------------------------------------------------------
# gradients: finite differences on every exported op
# ---------------------------------------------------------------------------

def _weighted(out, w):
    return ops.sum_(ops.mul(out, Tensor(w)))


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_core_ops(seed):
    rng = np.random.default_rng(seed)

    def case(op, out_shape, *in_shapes):
        w = rng.normal(size=out_shape)
        inputs = [Tensor(rng.normal(size=s), requires_grad=True) for s in in_shapes]
        return (lambda *args: _weighted(op(*args), w)), inputs

    checks = [
        case(ops.matmul, (3, 5), (3, 4), (4, 5)),
        case(ops.softmax_rows, (2, 6), (2, 6)),
        case(ops.layernorm, (3, 5), (3, 5), (5,), (5,)),
        case(ops.gelu, (4, 3), (4, 3)),
        case(ops.silu, (4, 3), (4, 3)),
        case(ops.depthwise_conv2d, (1, 2, 4, 4), (1, 2, 4, 4), (2, 3, 3)),
        case(ops.pointwise_conv2d, (1, 3, 3, 3), (1, 2, 3, 3), (3, 2), (3,)),
    ]
    for fn, inputs in checks:
        report = gradcheck(fn, inputs)
        assert report.max_err < 1e-5, str(report)


def test_gradcheck_rejects_nonscalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        gradcheck(lambda t: ops.mul(t, t), [x])


def test_gradcheck_needs_a_grad_input():
    x = Tensor(np.ones(2))
    with pytest.raises(UsageError):
        gradcheck(lambda t: ops.sum_(t), [x])


def test_gradcheck_restores_inputs(np_rng):
    x = Tensor(np_rng.normal(size=(3, 3)), requires_grad=True)
    before = x.data.copy()
    gradcheck(lambda t: ops.sum_(ops.mul(t, t)), [x])
    assert (x.data == before).all()


# ---------------------------------------------------------------------------
# rng
# ---------------------------------------------------------------------------

def test_rng_determinism_bit_identical():
    a = Rng(42).normal((100,))
    b = Rng(42).normal((100,))
    assert (a == b).all()


def test_rng_split_streams_differ_and_parent_unaffected():
    root = Rng(7)
    child_a = root.split("alpha")
    child_b = root.split("beta")
    assert not np.array_equal(child_a.normal((10,)), child_b.normal((10,)))
    # splitting must not consume parent state
    fresh = Rng(7)
    fresh.split("alpha")
    fresh.split("anything-else")
    assert (Rng(7).normal((10,)) == fresh.normal((10,))).all()


def test_rng_same_tag_same_stream():
    assert (Rng(3).split("x").normal((5,)) == Rng(3).split("x").normal((5,))).all()
    assert (Rng(3).split(17).normal((5,)) == Rng(3).split(17).normal((5,))).all()


def test_rng_deep_split_stable():
    a = Rng(9).split("layer").split(4).split("w").normal((8,))
    b = Rng(9).split("layer").split(4).split("w").normal((8,))
    assert (a == b).all()


def test_rng_state_roundtrip_mid_stream():
    rng = Rng(5).split("stream")
    rng.normal((7,))  # advance
    state = rng.state_dict()
    expected = rng.normal((13,))
    resumed = Rng.from_state_dict(state)
    assert (resumed.normal((13,)) == expected).all()


def test_rng_rejects_bad_tag():
    with pytest.raises(TypeError):
        Rng(0).split(3.14)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_pswt_roundtrip_f64_bitexact(tmp_path, np_rng):
    t = Tensor(np_rng.normal(size=(3, 4, 5)))
    path = tmp_path / "t.pswt"
    dump_tensor(t, path)
    back = load_tensor(path)
    assert back.data.dtype == np.float64
    assert (back.data == t.data).all()


def test_pswt_roundtrip_f32(tmp_path, np_rng):
    arr = np_rng.normal(size=(2, 6)).astype(np.float32)
    path = tmp_path / "t.pswt"
    dump_tensor(arr, path)
    back = load_tensor(path)
    assert back.data.dtype == np.float32
    assert (back.data == arr).all()


def test_pswt_scalar_and_header_layout(tmp_path):
    path = tmp_path / "s.pswt"
    dump_tensor(np.float64(3.5), path)
    raw = path.read_bytes()
    assert raw[:4] == b"PSWT"
    assert raw[4:6] == (1).to_bytes(2, "little")  # version
    assert raw[6] == 0 and raw[7] == 0  # f64, rank 0
    assert load_tensor(path).data == 3.5


def test_pswt_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.pswt"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(UsageError):
        load_tensor(bad)
    trunc = tmp_path / "trunc.pswt"
    good = tmp_path / "good.pswt"
    dump_tensor(np.ones((4, 4)), good)
    trunc.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(UsageError):
        load_tensor(trunc)


# ---------------------------------------------------------------------------
# flop metering
# ---------------------------------------------------------------------------

def test_flop_counter_matmul_exact():
    a, b = Tensor(np.ones((3, 4))), Tensor(np.ones((4, 5)))
    with count_flops() as counter:
        ops.matmul(a, b)
    assert counter.total == 2 * 3 * 5 * 4
    # nothing metered outside the context
    ops.matmul(a, b)
    assert counter.total == 2 * 3 * 5 * 4


def test_flop_counter_convs():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with count_flops() as counter:
        ops.depthwise_conv2d(x, Tensor(np.ones((2, 3, 3))))
        ops.pointwise_conv2d(x, Tensor(np.ones((5, 2))))
    assert counter.by_op["depthwise_conv2d"] == 2 * 1 * 2 * 4 * 4 * 9
    assert counter.by_op["pointwise_conv2d"] == 2 * 1 * 4 * 4 * 5 * 2


def test_f64_pipeline_bit_determinism():
    def run():
        rng = Rng(11)
        x = Tensor(rng.split("x").normal((2, 3, 4)))
        w = Tensor(rng.split("w").normal((4, 4)))
        y = ops.softmax_rows(ops.matmul(x, w))
        return ops.layernorm(y).data

    assert (run() == run()).all()
