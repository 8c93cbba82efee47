import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pamblind import autodiff as ad
from pamblind.autodiff import ParameterSet, Tape


def _conv_oracle(x, w, b, stride):
    c_out, c_in, k = w.shape
    n = (x.shape[1] - k) // stride + 1
    out = np.zeros((c_out, n))
    for o in range(c_out):
        for t in range(n):
            acc = b[o]
            for i in range(c_in):
                for kk in range(k):
                    acc += w[o, i, kk] * x[i, t * stride + kk]
            out[o, t] = acc
    return out


def _sig(a):
    return 1.0 / (1.0 + np.exp(-a))


def _gru_oracle(x, h, wx, uh, b):
    hid = h.size
    out = np.zeros(hid)
    pre = np.zeros(3 * hid)
    for j in range(3 * hid):
        pre[j] = b[j] + sum(wx[j, i] * x[i] for i in range(x.size))
    z = [_sig(pre[j] + sum(uh[j, m] * h[m] for m in range(hid))) for j in range(hid)]
    r = [_sig(pre[hid + j] + sum(uh[hid + j, m] * h[m] for m in range(hid))) for j in range(hid)]
    for j in range(hid):
        cand = np.tanh(pre[2 * hid + j] + sum(uh[2 * hid + j, m] * r[m] * h[m] for m in range(hid)))
        out[j] = (1 - z[j]) * h[j] + z[j] * cand
    return out


def _params(shapes, seed):
    p = ParameterSet(shapes)
    p.theta[:] = np.random.default_rng(seed).normal(size=p.size) * 0.5
    return p


def test_parameter_slices_cover_vector():
    p = ParameterSet([("a", (2, 3)), ("b", (4,)), ("c", ())])
    covered = np.zeros(p.size, dtype=int)
    for name in p.names:
        covered[p.slice_of(name)] += 1
    assert p.size == 11 and np.all(covered == 1)
    p["b"] = [1, 2, 3, 4]
    np.testing.assert_array_equal(p.theta[6:10], [1, 2, 3, 4])


def test_conv_delta_identity():
    tape = Tape()
    x = tape.constant(np.arange(10.0)[None])
    p = ParameterSet([("w", (1, 1, 1)), ("b", (1,))])
    p["w"] = 1.0
    leaves = tape.bind(p)
    y = ad.conv1d(x, leaves["w"], leaves["b"])
    np.testing.assert_array_equal(y.value, x.value)


def test_conv_length_formula():
    tape = Tape()
    x = tape.constant(np.zeros((1, 16)))
    w = tape.constant(np.zeros((1, 1, 7)))
    assert ad.conv1d(x, w, stride=2).shape == (1, 5)


def test_conv_rejects_long_kernel():
    tape = Tape()
    with pytest.raises(ValueError):
        ad.conv1d(tape.constant(np.zeros((1, 4))), tape.constant(np.zeros((1, 1, 5))))


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_direct_summation(stride):
    rng = np.random.default_rng(stride)
    x, w, b = rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    tape = Tape()
    y = ad.conv1d(tape.constant(x), tape.constant(w), tape.constant(b), stride)
    np.testing.assert_allclose(y.value, _conv_oracle(x, w, b, stride), atol=1e-12)


def test_gru_zero_weights():
    tape = Tape()
    h = np.array([[0.4, -1.0, 2.0]])
    out = ad.gru_cell(
        tape.constant([[1.0, 2.0]]), tape.constant(h), tape.constant(np.zeros((9, 2))),
        tape.constant(np.zeros((9, 3))), tape.constant(np.zeros(9)),
    )
    np.testing.assert_allclose(out.value, 0.5 * h, atol=1e-15)


def test_gru_zero_state():
    rng = np.random.default_rng(0)
    wx = rng.normal(size=(6, 2))
    x = rng.normal(size=(1, 2))
    tape = Tape()
    out = ad.gru_cell(tape.constant(x), tape.constant(np.zeros((1, 2))), tape.constant(wx),
                      tape.constant(np.zeros((6, 2))), tape.constant(np.zeros(6)))
    expect = _sig(x @ wx[:2].T) * np.tanh(x @ wx[4:].T)
    np.testing.assert_allclose(out.value, expect, atol=1e-14)


def test_gru_matches_scalar_loop():
    rng = np.random.default_rng(3)
    x, h = rng.normal(size=3), rng.normal(size=6)
    wx, uh, b = rng.normal(size=(18, 3)), rng.normal(size=(18, 6)), rng.normal(size=18)
    tape = Tape()
    out = ad.gru_cell(*(tape.constant(v) for v in (x[None], h[None], wx, uh, b)))
    np.testing.assert_allclose(out.value[0], _gru_oracle(x, h, wx, uh, b), atol=1e-12)


def test_gru_dimension_mismatch():
    tape = Tape()
    with pytest.raises(ValueError):
        ad.gru_cell(tape.constant(np.zeros((1, 3))), tape.constant(np.zeros((1, 6))),
                    tape.constant(np.zeros((18, 2))), tape.constant(np.zeros((18, 6))),
                    tape.constant(np.zeros(18)))


def test_quadratic_gradient_is_theta():
    p = _params([("a", (3, 4)), ("b", (5,))], seed=1)
    tape = Tape()
    leaves = tape.bind(p)
    flat = ad.concat([ad.reshape(leaves["a"], (12,)), leaves["b"]])
    loss = ad.scale(ad.mse(flat, np.zeros(17)), 17 / 2)
    np.testing.assert_allclose(tape.backward(loss), p.theta, rtol=1e-15)


def test_constant_loss_zero_gradient():
    p = _params([("w", (3,))], seed=2)
    tape = Tape()
    tape.bind(p)
    loss = ad.mse(tape.constant([1.0, 2.0]), np.zeros(2))
    np.testing.assert_array_equal(tape.backward(loss), np.zeros(3))


def test_non_scalar_loss_rejected():
    tape = Tape()
    with pytest.raises(ValueError):
        tape.backward(tape.constant(np.zeros(3)))


def test_zero_stuff_definition():
    tape = Tape()
    x = tape.constant([1.5, -2.0])
    np.testing.assert_array_equal(ad.zero_stuff(x, 2).value, [1.5, 0, -2.0, 0])
    np.testing.assert_array_equal(ad.zero_stuff(x, 1).value, x.value)


def test_zero_stuff_adjoint():
    rng = np.random.default_rng(4)
    for factor in (1, 2, 3):
        x, y = rng.normal(size=7), rng.normal(size=7 * factor)
        tape = Tape()
        xs = ad.zero_stuff(tape.constant(x), factor).value
        tape = Tape()
        ys = ad.subsample(tape.constant(y), factor).value
        assert abs(np.dot(xs, y) - np.dot(x, ys)) < 1e-10
        # backward of zero_stuff is exactly subsample, and vice versa
        node = ad.zero_stuff(tape.constant(x), factor)
        np.testing.assert_array_equal(node.backward_fn(y)[0], ys)


def _vjp(build, x, g):
    """Vector-Jacobian product of a linear map via its recorded backward."""
    tape = Tape()
    out = build(tape.constant(x))
    out.grad = g
    grads = {id(out): g}
    for node in reversed(tape.nodes):
        if id(node) not in grads or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(grads[id(node)])):
            if pg is not None:
                grads[id(parent)] = grads.get(id(parent), 0) + pg
    return out.value, grads.get(id(tape.nodes[0]))


@pytest.mark.parametrize("stride", [1, 2, 4])
def test_conv_adjoint_identity(stride):
    rng = np.random.default_rng(10 + stride)
    w = rng.normal(size=(3, 2, 5))
    x = rng.normal(size=(2, 23))

    def build(t):
        return ad.conv1d(t, t.tape.constant(w), stride=stride)

    y_val, _ = _vjp(build, x, np.zeros((3, (23 - 5) // stride + 1)))
    g = rng.normal(size=y_val.shape)
    _, xt = _vjp(build, x, g)
    assert abs(np.sum(y_val * g) - np.sum(x * xt)) < 1e-10


def test_dense_adjoint_identity():
    rng = np.random.default_rng(20)
    w, x = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
    y_val, _ = _vjp(lambda t: ad.dense(t, t.tape.constant(w)), x, np.zeros((3, 4)))
    g = rng.normal(size=y_val.shape)
    _, xt = _vjp(lambda t: ad.dense(t, t.tape.constant(w)), x, g)
    assert abs(np.sum(y_val * g) - np.sum(x * xt)) < 1e-10


# --------------------------------------------------------- finite differences

def _small_network(seed):
    """A graph touching every operator, returning (params, loss_fn)."""
    rng = np.random.default_rng(seed)
    p = _params([
        ("c1w", (3, 1, 5)), ("c1b", (3,)), ("c2w", (2, 3, 3)), ("c2b", (2,)),
        ("dw", (4, 6)), ("db", (4,)),
        ("gwx", (9, 4)), ("guh", (9, 3)), ("gb", (9,)), ("ow", (2, 3)),
        ("ew", (1, 1, 5)),
    ], seed)
    y = rng.normal(size=40)
    target = rng.normal(size=(2,))
    recon_target = rng.normal(size=32)

    def loss_fn(theta):
        q = ParameterSet(p.shapes(), theta)
        tape = Tape()
        v = tape.bind(q)
        h = ad.relu(ad.conv1d(tape.constant(y[None]), v["c1w"], v["c1b"], stride=2))  # (3, 18)
        h = ad.tanh(ad.conv1d(h, v["c2w"], v["c2b"], stride=3))  # (2, 6)
        d = ad.sigmoid(ad.dense(ad.reshape(h, (2, 6)), v["dw"], v["db"]))  # (2, 4)
        state = tape.constant(np.zeros((2, 3)))
        for step in range(3):
            frame = ad.take(d, np.array([[0, 1, 2, 3], [4, 5, 6, 7]]) if step % 2 else np.array([[4, 5, 6, 7], [0, 1, 2, 3]]))
            state = ad.gru_cell(frame, state, v["gwx"], v["guh"], v["gb"])
        out = ad.dense(state, v["ow"])  # (2, 2)
        sym = ad.reshape(out, (4,))
        sub = ad.subsample(sym, 2, 1)
        stuffed = ad.zero_stuff(ad.reshape(ad.crop(ad.transpose(h), 0, 6), (12,)), 3)  # (36,)
        rec = ad.conv1d(ad.reshape(stuffed, (1, 36)), v["ew"])  # (1, 32)
        decided = np.sign(sub.value)
        st = ad.quantize_st(sub, decided)
        loss = ad.add(ad.scale(ad.mse(sub, target), 0.3),
                      ad.scale(ad.mse(ad.reshape(rec, (32,)), recon_target), 0.7))
        loss = ad.add(loss, ad.scale(ad.mse(st, np.zeros(2)), 0.0))
        return tape, loss

    return p, loss_fn


def test_finite_difference_all_operators():
    worst = 0.0
    probes = 0
    for seed in range(5):
        p, loss_fn = _small_network(seed)
        tape, loss = loss_fn(p.theta)
        grad = tape.backward(loss)
        rng = np.random.default_rng(100 + seed)
        for idx in rng.choice(p.size, size=25, replace=False):
            e = np.zeros(p.size)
            e[idx] = 1e-6
            fd = (loss_fn(p.theta + e)[1].value - loss_fn(p.theta - e)[1].value) / 2e-6
            denom = max(abs(fd), abs(grad[idx]), 1e-6)
            worst = max(worst, abs(fd - grad[idx]) / denom)
            probes += 1
    assert probes >= 100
    assert worst < 1e-4


def test_replay_is_bit_identical():
    p, loss_fn = _small_network(7)
    t1, l1 = loss_fn(p.theta)
    t2, l2 = loss_fn(p.theta)
    assert l1.value == l2.value
    np.testing.assert_array_equal(t1.backward(l1), t2.backward(l2))


def test_fanout_accumulates():
    rng = np.random.default_rng(8)
    p = _params([("w", (6,))], 8)
    a, b = rng.normal(size=6), rng.normal(size=6)

    def grad_of(terms):
        tape = Tape()
        w = tape.bind(p)["w"]
        parts = [ad.mse(ad.tanh(w), a) if t == "f" else ad.mse(ad.relu(w), b) for t in terms]
        loss = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
        return tape.backward(loss)

    np.testing.assert_allclose(grad_of("fg"), grad_of("f") + grad_of("g"), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**16))
def test_conv_gradient_property(stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 17))
    target_len = (17 - 4) // stride + 1
    target = rng.normal(size=(3, target_len))
    p = _params([("w", (3, 2, 4)), ("b", (3,))], seed)

    def loss_of(theta):
        tape = Tape()
        v = tape.bind(ParameterSet(p.shapes(), theta))
        return tape, ad.mse(ad.conv1d(tape.constant(x), v["w"], v["b"], stride), target)

    tape, loss = loss_of(p.theta)
    grad = tape.backward(loss)
    idx = int(rng.integers(p.size))
    e = np.zeros(p.size)
    e[idx] = 1e-6
    fd = (loss_of(p.theta + e)[1].value - loss_of(p.theta - e)[1].value) / 2e-6
    assert abs(fd - grad[idx]) <= 1e-4 * max(abs(fd), abs(grad[idx]), 1e-6)
