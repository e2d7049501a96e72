import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, lstm_final, lstm_step
from tpavc.errors import DimensionError, NumericError
from tpavc.nn import (
    MLP,
    Adam,
    AttentionBlock,
    BiLSTM,
    Embedding,
    LayerNorm,
    Linear,
    ParamTensor,
    Tape,
    Tensor,
    finite_difference_check,
    load_checkpoint,
    save_checkpoint,
)
from tpavc.nn import tensor as T


def test_linear_zero_input_gives_bias():
    lin = Linear(3, 2, np.random.default_rng(0))
    lin.b.data = np.array([0.5, -1.5])
    out = lin(np.zeros((4, 3))).data
    assert np.all(out == np.array([0.5, -1.5]))


def test_linear_identity():
    lin = Linear(2, 2, np.random.default_rng(0))
    lin.W.data = np.eye(2)
    lin.b.data = np.zeros(2)
    x = np.random.default_rng(1).normal(size=(5, 2))
    assert np.array_equal(lin(x).data, x)


def test_linear_matches_matmul_and_fd():
    rng = np.random.default_rng(2)
    lin = Linear(2, 2, rng)
    x = rng.normal(size=(3, 2))
    assert np.allclose(lin(x).data, x @ lin.W.data + lin.b.data, atol=1e-14)
    err = finite_difference_check(lambda: T.sum(T.square(lin(x))), lin.parameters())
    assert err < 1e-4


def test_linear_shape_mismatch():
    lin = Linear(3, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        lin(np.zeros((2, 4)))


def test_embedding_lookup_and_gradient():
    rng = np.random.default_rng(0)
    emb = Embedding(4, 3, rng)
    emb.table.data[0] = 1.0
    assert np.array_equal(emb(0).data, np.ones(3))
    emb.zero_grad()
    with Tape() as tape:
        loss = T.sum(emb(np.array([2])))
    tape.backward(loss)
    expect = np.zeros((4, 3))
    expect[2] = 1.0
    assert np.array_equal(emb.table.grad, expect)


def test_embedding_out_of_range():
    emb = Embedding(4, 3, np.random.default_rng(0))
    with pytest.raises(IndexError):
        emb(4)
    with pytest.raises(IndexError):
        emb(-1)


def test_embedding_fd():
    rng = np.random.default_rng(3)
    emb = Embedding(5, 4, rng)
    w = rng.normal(size=4)
    err = finite_difference_check(lambda: T.sum(T.mul(T.tanh(emb(np.array([3]))), w)), emb.parameters())
    assert err < 1e-4


def test_lstm_single_step_matches_hand_cell():
    rng = np.random.default_rng(4)
    bi = BiLSTM(3, 4, rng)
    x = rng.normal(size=(1, 3))
    out = bi(x).data
    f, b = bi.fwd, bi.bwd
    hf, _ = lstm_step(x[0], np.zeros(2), np.zeros(2), f.Wx.data, f.Wh.data, f.b.data)
    hb, _ = lstm_step(x[0], np.zeros(2), np.zeros(2), b.Wx.data, b.Wh.data, b.b.data)
    assert np.allclose(out, np.concatenate([hf, hb]), atol=1e-14)


def test_lstm_sequence_matches_hand_unroll():
    rng = np.random.default_rng(5)
    bi = BiLSTM(2, 6, rng)
    seq = rng.normal(size=(7, 2))
    f, b = bi.fwd, bi.bwd
    expect = np.concatenate([lstm_final(seq, f.Wx.data, f.Wh.data, f.b.data),
                             lstm_final(seq[::-1], b.Wx.data, b.Wh.data, b.b.data)])
    assert np.allclose(bi(seq).data, expect, atol=1e-13)


def test_bilstm_direction_swap():
    rng = np.random.default_rng(6)
    bi = BiLSTM(2, 4, rng)
    seq = rng.normal(size=(5, 2))
    before = bi(seq).data
    bi.fwd, bi.bwd = bi.bwd, bi.fwd
    after = bi(seq[::-1].copy()).data
    assert np.allclose(after, np.concatenate([before[2:], before[:2]]), atol=1e-14)


def test_bilstm_fd_and_empty():
    rng = np.random.default_rng(7)
    bi = BiLSTM(3, 4, rng)
    seq = rng.normal(size=(5, 3))
    w = rng.normal(size=4)
    assert finite_difference_check(lambda: T.sum(T.mul(bi(seq), w)), bi.parameters()) < 1e-4
    with pytest.raises(ValueError):
        bi(np.zeros((0, 3)))


def test_attention_single_token():
    rng = np.random.default_rng(8)
    blk = AttentionBlock(4, rng)
    E = rng.normal(size=(1, 4))
    out, A = blk(E, return_weights=True)
    assert A.shape == (1, 1) and A[0, 0] == 1.0
    V = E @ blk.W_V.data
    pre = E + V @ blk.W_Y.data
    mu, sd = pre.mean(), pre.std()
    assert np.allclose(out.data, (pre - mu) / np.sqrt(sd ** 2 + 1e-8) * blk.norm.gain.data + blk.norm.bias.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_attention_rows_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    blk = AttentionBlock(8, rng)
    _, A = blk(rng.normal(size=(n, 8)) * 3, return_weights=True)
    assert np.all(np.abs(A.sum(axis=-1) - 1.0) <= 1e-12)


def test_attention_fd_and_nonfinite():
    rng = np.random.default_rng(9)
    blk = AttentionBlock(8, rng)
    E = rng.normal(size=(4, 8))
    w = rng.normal(size=(4, 8))
    assert finite_difference_check(lambda: T.sum(T.mul(blk(E), w)), blk.parameters()) < 1e-4
    E[0, 0] = np.nan
    with pytest.raises(NumericError):
        blk(E)


def test_attention_permutation_equivariant():
    rng = np.random.default_rng(10)
    blk = AttentionBlock(6, rng)
    E = rng.normal(size=(5, 6))
    perm = rng.permutation(5)
    assert np.allclose(blk(E).data[perm], blk(E[perm]).data, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_layernorm_standardises_rows(seed, scale):
    rng = np.random.default_rng(seed)
    ln = LayerNorm(7)
    x = rng.normal(size=(3, 7)) * scale + rng.normal()
    out = ln(x).data
    var = x.var(axis=1)
    assert np.all(np.abs(out.mean(axis=1)) < 1e-6)
    # the variance floor eps shrinks the output variance to var / (var + eps)
    assert np.allclose(out.var(axis=1), var / (var + 1e-8), rtol=1e-10)
    big = var >= 1e-2
    assert np.all(np.abs(out.var(axis=1)[big] - 1.0) < 1e-6)


def test_quadratic_fd_is_exact():
    p = ParamTensor(np.random.default_rng(11).normal(size=5), "p")
    assert finite_difference_check(lambda: T.sum(T.square(p)), {"p": p}) < 1e-9


def test_constant_loss_reports_zero():
    p = ParamTensor(np.ones(3), "p")
    assert finite_difference_check(lambda: T.sum(T.mul(p, 0.0)), {"p": p}) == 0.0


def test_fd_rejects_nonfinite_and_bad_step():
    p = ParamTensor(np.ones(2), "p")
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        finite_difference_check(lambda: T.log(T.sub(T.sum(p), 2.0)), {"p": p})
    with pytest.raises(ValueError):
        finite_difference_check(lambda: T.sum(p), {"p": p}, step=0.0)


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "exp", "relu", "sqrt", "log", "softmax", "div"])
def test_elementwise_ops_match_central_differences(op):
    rng = np.random.default_rng(12)
    x0 = rng.uniform(0.5, 2.0, size=(3, 4))
    w = rng.normal(size=(3, 4))

    def build(x):
        t = Tensor(x, requires_grad=True)
        if op == "softmax":
            y = T.softmax(t, axis=-1)
        elif op == "div":
            y = T.div(1.0, t)
        else:
            y = getattr(T, op)(t)
        return t, T.sum(T.mul(y, w))

    t, loss = None, None
    with Tape() as tape:
        t, loss = build(x0)
    tape.backward(loss)
    num = central_difference(lambda x: float(build(x)[1].data), x0)
    assert np.allclose(t.grad, num, rtol=1e-6, atol=1e-8)


def test_cross_entropy_and_masked_min_gradients():
    rng = np.random.default_rng(13)
    logits = ParamTensor(rng.normal(size=(5, 4)), "z")
    labels = rng.integers(0, 4, size=5)
    assert finite_difference_check(lambda: T.cross_entropy(logits, labels), {"z": logits}) < 1e-4
    mask = rng.random((5, 4)) < 0.6
    mask[:, 0] = True
    assert finite_difference_check(lambda: T.sum(T.masked_min(logits, mask, axis=1)), {"z": logits}) < 1e-4


def test_mlp_fd_over_ten_instances():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        net = MLP([4, 5, 3], rng)
        x = rng.normal(size=(6, 4))
        # keep pre-activations away from the relu kink
        assert finite_difference_check(lambda: T.sum(T.square(net(x))), net.parameters()) < 1e-4


def test_forward_determinism():
    out = []
    for _ in range(2):
        rng = np.random.default_rng(14)
        blk = AttentionBlock(4, rng)
        out.append(blk(rng.normal(size=(3, 4))).data.tobytes())
    assert out[0] == out[1]


def test_tape_records_and_untaped_forward_builds_nothing():
    p = ParamTensor(np.ones(3), "p")
    with Tape() as tape:
        T.sum(T.square(p))
    assert len(tape) >= 2
    y = T.sum(T.square(p))
    assert isinstance(y, Tensor)


def test_adam_minimises_quadratic():
    p = ParamTensor(np.array([3.0, -2.0]), "p")
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        with Tape() as tape:
            loss = T.sum(T.square(p))
        tape.backward(loss)
        opt.step()
    assert np.all(np.abs(p.data) < 1e-2)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(15)
    tensors = {"a": rng.normal(size=(3, 4)), "b.c": np.array([np.pi, -0.0, 1e-300])}
    save_checkpoint(tmp_path / "x.ckpt", tensors, {"note": "hi"})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta["note"] == "hi"
    for k, v in tensors.items():
        assert back[k].tobytes() == v.tobytes()


def test_state_dict_round_trip():
    rng = np.random.default_rng(16)
    a, b = MLP([3, 4, 1], rng), MLP([3, 4, 1], rng)
    b.load_state_dict(a.state_dict())
    x = rng.normal(size=(2, 3))
    assert np.array_equal(a(x).data, b(x).data)
