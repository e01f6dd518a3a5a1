import math

import numpy as np
import pytest
import torch

from rwen_tts.errors import NumericalError, ValidationError
from rwen_tts.nncore import (
    Adam, GruCell, Param, adam_step, concat, conv1d, dropout, gradcheck,
    gru_forward, gru_forward_masked, init_gru, layer_norm, linear, mse, relu,
    softmax_attention, uniform_param, zeros_param,
)

F64 = torch.float64


def _zero_gru(d_in, d_h, dtype=torch.float32) -> GruCell:
    names = ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h")
    shapes = [(d_h, d_in)] * 3 + [(d_h, d_h)] * 3 + [(d_h,)] * 3
    params = {n: zeros_param(f"g.{n}", s, dtype) for n, s in zip(names, shapes)}
    return GruCell(d_in=d_in, d_h=d_h, **params)


# --- GRU ----------------------------------------------------------------

def test_gru_zero_cell_is_fixed_point():
    cell = _zero_gru(3, 4)
    states, last = gru_forward(cell, torch.randn(3, 6))
    assert torch.equal(states, torch.zeros(4, 6))
    assert torch.equal(last, torch.zeros(4))


def test_gru_scalar_update_gate_saturated():
    # z saturates at sigmoid(20), so each state is tanh(w_h * x) up to 2e-9
    cell = _zero_gru(1, 1, F64)
    w_h, w_r, b_z = 0.7, 0.3, 20.0
    with torch.no_grad():
        cell.w_h.data[0, 0] = w_h
        cell.w_r.data[0, 0] = w_r
        cell.b_z.data[0] = b_z
    xs = torch.tensor([[0.5, -1.2, 2.0, 0.1]], dtype=F64)
    states, _ = gru_forward(cell, xs)
    for t in range(4):
        expected = math.tanh(w_h * xs[0, t].item())
        assert abs(states[0, t].item() - expected) < 1e-8


def test_gru_rejects_bad_input():
    cell = _zero_gru(3, 4)
    with pytest.raises(ValidationError, match="empty"):
        gru_forward(cell, torch.zeros(3, 0))
    with pytest.raises(ValidationError, match="shaped"):
        gru_forward(cell, torch.zeros(2, 5))


def test_gru_gradcheck_against_finite_differences():
    gen = torch.Generator().manual_seed(0)
    cell = init_gru("gru", 3, 4, gen, F64)
    xs = torch.randn(3, 5, generator=gen, dtype=F64)
    weights = torch.randn(4, 5, generator=gen, dtype=F64)

    def closure():
        states, _ = gru_forward(cell, xs)
        return (states * weights).sum()

    report = gradcheck(closure, cell.params(), tolerance=1e-4)
    assert report.ok, report.summary()


def test_masked_gru_matches_sequential():
    gen = torch.Generator().manual_seed(1)
    cell = init_gru("gru", 2, 3, gen, F64)
    lengths = [1, 4, 2]
    seqs = [torch.randn(2, n, generator=gen, dtype=F64) for n in lengths]
    longest = max(lengths)
    batch = torch.zeros(2, len(seqs), longest, dtype=F64)
    mask = torch.zeros(len(seqs), longest, dtype=torch.bool)
    for b, seq in enumerate(seqs):
        batch[:, b, :seq.shape[1]] = seq
        mask[b, :seq.shape[1]] = True
    batched = gru_forward_masked(cell, batch, mask)
    for b, seq in enumerate(seqs):
        _, last = gru_forward(cell, seq)
        assert torch.allclose(batched[:, b], last, atol=1e-12)


# --- primitive ops ------------------------------------------------------

def test_linear_identity():
    x = torch.randn(4, 3)
    y = linear(torch.eye(4), torch.zeros(4), x)
    assert torch.equal(y, x)
    v = torch.randn(4)
    assert torch.equal(linear(torch.eye(4), None, v), v)


def test_concat_stacks_vectors():
    out = concat([torch.tensor([1.0]), torch.tensor([2.0, 3.0])])
    assert torch.equal(out, torch.tensor([1.0, 2.0, 3.0]))


def test_conv1d_averaging_kernel_keeps_constants():
    x = torch.full((1, 9), 5.0)
    w = torch.full((1, 1, 3), 1.0 / 3.0)
    y = conv1d(x, w)
    assert y.shape == (1, 9)
    assert torch.allclose(y, torch.full((1, 9), 5.0))


def test_conv1d_edges():
    w = torch.randn(2, 3, 3)
    assert conv1d(torch.randn(3, 1), w).shape == (2, 1)
    assert conv1d(torch.zeros(3, 0), w).shape == (2, 0)
    with pytest.raises(ValidationError, match="odd"):
        conv1d(torch.zeros(3, 4), torch.randn(2, 3, 2))
    with pytest.raises(ValidationError, match="channels"):
        conv1d(torch.zeros(4, 4), w)


def test_layer_norm_statistics():
    x = torch.randn(16, 5, dtype=F64, generator=torch.Generator().manual_seed(2))
    out = layer_norm(x, torch.ones(16, dtype=F64), torch.zeros(16, dtype=F64))
    mean = out.mean(dim=0)
    var = out.var(dim=0, unbiased=False)
    assert mean.abs().max().item() < 1e-6
    assert (var - 1).abs().max().item() < 1e-5


def test_dropout_modes():
    x = torch.randn(5, 4)
    assert torch.equal(dropout(x, 0.5, training=False), x)
    assert torch.equal(dropout(x, 0.0, training=True), x)
    g1 = torch.Generator().manual_seed(3)
    g2 = torch.Generator().manual_seed(3)
    a = dropout(x, 0.5, training=True, generator=g1)
    b = dropout(x, 0.5, training=True, generator=g2)
    assert torch.equal(a, b)
    kept = a[a != 0]
    orig = x[a != 0]
    assert torch.allclose(kept, orig * 2.0)
    with pytest.raises(ValidationError):
        dropout(x, 1.0, training=True)


def test_attention_shapes_and_single_position():
    gen = torch.Generator().manual_seed(4)
    d = 6
    mats = [torch.randn(d, d, generator=gen) * 0.3 for _ in range(4)]
    biases = [torch.randn(d, generator=gen) * 0.1 for _ in range(4)]
    x = torch.randn(d, 1, generator=gen)
    out = softmax_attention(x, 2, mats[0], biases[0], mats[1], biases[1],
                            mats[2], biases[2], mats[3], biases[3])
    # one position attends only to itself: output is Wo @ (Wv x + bv) + bo
    expected = mats[3] @ (mats[2] @ x + biases[2].unsqueeze(1)) \
        + biases[3].unsqueeze(1)
    assert torch.allclose(out, expected, atol=1e-6)
    with pytest.raises(ValidationError, match="divisible"):
        softmax_attention(torch.randn(5, 3), 2, mats[0], biases[0],
                          mats[1], biases[1], mats[2], biases[2],
                          mats[3], biases[3])


def test_mse_basics():
    x = torch.randn(3, 4)
    assert mse(x, x).item() == 0.0
    assert mse(torch.zeros(2, 0), torch.zeros(2, 0)).item() == 0.0
    with pytest.raises(ValidationError):
        mse(torch.zeros(2), torch.zeros(3))


# --- Adam ---------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = Param("w", torch.tensor([1.0, -2.0]))
    state = {}
    adam_step([p], [torch.zeros(2)], lr=0.1, t=1, state=state)
    assert torch.equal(p.data, torch.tensor([1.0, -2.0]))


def test_adam_constant_gradient_update_magnitude():
    # with constant gradient the bias-corrected update tends to lr * sign(g)
    p = Param("w", torch.tensor([0.0]))
    g = torch.tensor([3.7])
    state = {}
    lr = 0.01
    prev = p.data.item()
    for t in range(1, 301):
        adam_step([p], [g], lr=lr, t=t, state=state)
        step = prev - p.data.item()
        prev = p.data.item()
    assert abs(step - lr) < 1e-6


def test_adam_quadratic_bowl():
    p = Param("w", torch.tensor([1.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = (p.data ** 2).sum()
        loss.backward()
        opt.step()
    assert abs(p.data.item()) < 0.1


def test_adam_rejects_non_finite_gradient():
    p = Param("broken.param", torch.zeros(2))
    with pytest.raises(NumericalError, match="broken.param"):
        adam_step([p], [torch.tensor([float("nan"), 0.0])], lr=0.1, t=1,
                  state={})


def test_adam_step_counter_validated():
    p = Param("w", torch.zeros(1))
    with pytest.raises(ValidationError):
        adam_step([p], [torch.zeros(1)], lr=0.1, t=0, state={})


# --- gradcheck harness --------------------------------------------------

def test_gradcheck_identity_model_zero_error():
    p = Param("w", torch.randn(4, dtype=F64))
    report = gradcheck(lambda: p.data.sum(), [p])
    assert report.ok
    assert report.max_rel_err < 1e-9


def test_gradcheck_flags_broken_backward():
    class WrongGrad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x * 2.0

        @staticmethod
        def backward(ctx, grad):
            return grad * 3.0  # should be 2.0


    p = Param("w", torch.randn(3, dtype=F64))
    report = gradcheck(lambda: WrongGrad.apply(p.data).sum(), [p])
    assert not report.ok
    assert report.max_rel_err > 0.1


def test_gradcheck_requires_float64():
    p = Param("w", torch.randn(3))
    with pytest.raises(ValidationError, match="float64"):
        gradcheck(lambda: p.data.sum(), [p])


def test_param_load_shape_check():
    p = uniform_param("w", (2, 3), 3, torch.Generator().manual_seed(0))
    with pytest.raises(ValidationError, match="'w'"):
        p.load(np.zeros((3, 2), dtype=np.float32))
    p.load(np.ones((2, 3), dtype=np.float32))
    assert torch.equal(p.data, torch.ones(2, 3))


def test_relu_is_relu():
    x = torch.tensor([-1.0, 0.5])
    assert torch.equal(relu(x), torch.tensor([0.0, 0.5]))
