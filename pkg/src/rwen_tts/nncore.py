"""Parameters, differentiable ops, Adam, and a finite-difference checker.

Forward ops work on plain torch tensors shaped feature-by-position;
reverse-mode gradients come from autograd. Working precision is float32;
the gradient checker insists on float64 because central differences at
h=1e-6 drown in float32 rounding error.
"""

from __future__ import annotations

import math
import random
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .errors import NumericalError, ValidationError


def _value(x):
    return x.data if isinstance(x, Param) else x


class Param:
    """A named trainable tensor; gradients accumulate on ``data.grad``."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, values: torch.Tensor):
        self.name = name
        self.data = values.detach().clone().requires_grad_(True)

    @property
    def grad(self):
        return self.data.grad

    @property
    def shape(self):
        return tuple(self.data.shape)

    def zero_grad(self) -> None:
        self.data.grad = None

    def numpy(self):
        return self.data.detach().cpu().numpy()

    def load(self, values) -> None:
        values = torch.as_tensor(values, dtype=self.data.dtype)
        if tuple(values.shape) != self.shape:
            raise ValidationError(
                f"parameter '{self.name}': stored shape {tuple(values.shape)} "
                f"does not match expected {self.shape}"
            )
        with torch.no_grad():
            self.data.copy_(values)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def uniform_param(name, shape, fan_in, generator, dtype=torch.float32) -> Param:
    bound = 1.0 / math.sqrt(fan_in)
    values = (torch.rand(shape, generator=generator, dtype=dtype) * 2 - 1) * bound
    return Param(name, values)


def normal_param(name, shape, std, generator, dtype=torch.float32) -> Param:
    return Param(name, torch.randn(shape, generator=generator, dtype=dtype) * std)


def zeros_param(name, shape, dtype=torch.float32) -> Param:
    return Param(name, torch.zeros(shape, dtype=dtype))


# ---------------------------------------------------------------------------
# GRU cell. Gating convention is pinned: h' = (1 - z) * h + z * h_cand.

@dataclass
class GruCell:
    d_in: int
    d_h: int
    w_r: Param
    w_z: Param
    w_h: Param
    u_r: Param
    u_z: Param
    u_h: Param
    b_r: Param
    b_z: Param
    b_h: Param

    def params(self) -> list[Param]:
        return [self.w_r, self.w_z, self.w_h, self.u_r, self.u_z, self.u_h,
                self.b_r, self.b_z, self.b_h]


def init_gru(name, d_in, d_h, generator, dtype=torch.float32) -> GruCell:
    def w(suffix, shape, fan_in):
        return uniform_param(f"{name}.{suffix}", shape, fan_in, generator, dtype)

    return GruCell(
        d_in=d_in, d_h=d_h,
        w_r=w("w_r", (d_h, d_in), d_in),
        w_z=w("w_z", (d_h, d_in), d_in),
        w_h=w("w_h", (d_h, d_in), d_in),
        u_r=w("u_r", (d_h, d_h), d_h),
        u_z=w("u_z", (d_h, d_h), d_h),
        u_h=w("u_h", (d_h, d_h), d_h),
        b_r=zeros_param(f"{name}.b_r", (d_h,), dtype),
        b_z=zeros_param(f"{name}.b_z", (d_h,), dtype),
        b_h=zeros_param(f"{name}.b_h", (d_h,), dtype),
    )


def _gru_step(cell: GruCell, x, h):
    expand = x.dim() == 2
    def b(p):
        return p.data.unsqueeze(1) if expand else p.data
    r = torch.sigmoid(cell.w_r.data @ x + cell.u_r.data @ h + b(cell.b_r))
    z = torch.sigmoid(cell.w_z.data @ x + cell.u_z.data @ h + b(cell.b_z))
    cand = torch.tanh(cell.w_h.data @ x + cell.u_h.data @ (r * h) + b(cell.b_h))
    return (1 - z) * h + z * cand


def gru_forward(cell: GruCell, inputs, h0=None):
    """Run the cell over a (d_in, T) sequence; returns (all states, last)."""
    if isinstance(inputs, (list, tuple)):
        inputs = torch.stack(list(inputs), dim=1)
    if inputs.dim() != 2 or inputs.shape[0] != cell.d_in:
        raise ValidationError(
            f"expected inputs shaped ({cell.d_in}, T), got {tuple(inputs.shape)}"
        )
    if inputs.shape[1] == 0:
        raise ValidationError("empty input sequence")
    h = (torch.zeros(cell.d_h, dtype=inputs.dtype)
         if h0 is None else _value(h0))
    states = []
    for t in range(inputs.shape[1]):
        h = _gru_step(cell, inputs[:, t], h)
        states.append(h)
    return torch.stack(states, dim=1), h


def gru_forward_masked(cell: GruCell, inputs, mask, h0=None):
    """Batched GRU with tail padding: (d_in, B, T) inputs, (B, T) bool mask.

    Masked steps keep the previous hidden state, so with padding at the tail
    the result equals running each sequence alone. Returns (d_h, B).
    """
    d_in, batch, steps = inputs.shape
    if d_in != cell.d_in:
        raise ValidationError(f"input size {d_in} != cell d_in {cell.d_in}")
    h = (torch.zeros(cell.d_h, batch, dtype=inputs.dtype)
         if h0 is None else _value(h0))
    for t in range(steps):
        nxt = _gru_step(cell, inputs[:, :, t], h)
        h = torch.where(mask[:, t].unsqueeze(0), nxt, h)
    return h


# ---------------------------------------------------------------------------
# Elementwise / linear-algebra ops.

def linear(w, b, x):
    """w @ x + b for a vector (d,) or a column-stacked matrix (d, L)."""
    w, x = _value(w), _value(x)
    y = w @ x
    if b is None:
        return y
    b = _value(b)
    return y + (b.unsqueeze(1) if y.dim() == 2 else b)


def concat(parts, dim=0):
    return torch.cat([_value(p) for p in parts], dim=dim)


def relu(x):
    return torch.relu(_value(x))


def conv1d(x, w, b=None):
    """Same-length 1-D convolution over (C_in, L) with edge padding.

    Edge (replicate) padding keeps constant signals constant all the way to
    the sequence ends, which zero padding would not.
    """
    x, w = _value(x), _value(w)
    k = w.shape[2]
    if k % 2 != 1:
        raise ValidationError(f"kernel size must be odd, got {k}")
    if x.shape[0] != w.shape[1]:
        raise ValidationError(
            f"input has {x.shape[0]} channels, kernel expects {w.shape[1]}"
        )
    if x.shape[1] == 0:
        return x.new_zeros((w.shape[0], 0))
    pad = (k - 1) // 2
    xp = F.pad(x.unsqueeze(0), (pad, pad), mode="replicate")
    y = F.conv1d(xp, w, _value(b) if b is not None else None)
    return y.squeeze(0)


def layer_norm(x, gain, bias, eps=1e-8):
    """Normalize each position's feature vector to zero mean, unit variance."""
    x = _value(x)
    mu = x.mean(dim=0, keepdim=True)
    var = x.var(dim=0, unbiased=False, keepdim=True)
    normed = (x - mu) / torch.sqrt(var + eps)
    gain, bias = _value(gain), _value(bias)
    if x.dim() == 2:
        return gain.unsqueeze(1) * normed + bias.unsqueeze(1)
    return gain * normed + bias


def dropout(x, p, *, training, generator=None):
    """Identity in eval mode; explicit seeded mask in training mode."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout probability must be in [0, 1), got {p}")
    x = _value(x)
    if not training or p == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p)
    return x * keep / (1.0 - p)


def softmax_attention(x, n_heads, wq, bq, wk, bk, wv, bv, wo, bo):
    """Multi-head self-attention over a (d, L) sequence, no masking."""
    x = _value(x)
    d, length = x.shape
    if d % n_heads != 0:
        raise ValidationError(f"width {d} not divisible by {n_heads} heads")
    d_head = d // n_heads
    q = linear(wq, bq, x)
    k = linear(wk, bk, x)
    v = linear(wv, bv, x)
    outs = []
    for h in range(n_heads):
        sl = slice(h * d_head, (h + 1) * d_head)
        scores = (q[sl].transpose(0, 1) @ k[sl]) / math.sqrt(d_head)  # (L, L)
        attn = torch.softmax(scores, dim=1)
        outs.append(v[sl] @ attn.transpose(0, 1))
    return linear(wo, bo, torch.cat(outs, dim=0))


def mse(pred, target):
    pred, target = _value(pred), _value(target)
    if pred.shape != target.shape:
        raise ValidationError(
            f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
    if pred.numel() == 0:
        return pred.new_zeros(())
    return ((pred - target) ** 2).mean()


# ---------------------------------------------------------------------------
# Optimizer.

def adam_step(params, grads, *, lr, beta1=0.9, beta2=0.999, eps=1e-8, t, state):
    """One bias-corrected adaptive update; first/second moments in ``state``."""
    if t < 1:
        raise ValidationError(f"step counter must be >= 1, got {t}")
    bias1 = 1 - beta1 ** t
    bias2 = 1 - beta2 ** t
    for p, g in zip(params, grads):
        if g is None:
            g = torch.zeros_like(p.data)
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter '{p.name}'")
        if p.name not in state:
            state[p.name] = (torch.zeros_like(p.data), torch.zeros_like(p.data))
        m, v = state[p.name]
        with torch.no_grad():
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            denom = (v / bias2).sqrt_().add_(eps)
            p.data.addcdiv_(m / bias1, denom, value=-lr)
        if not torch.isfinite(p.data).all():
            raise NumericalError(
                f"parameter '{p.name}' became non-finite after update"
            )


class Adam:
    def __init__(self, params: Sequence[Param], *, lr,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        adam_step(
            self.params, [p.grad for p in self.params],
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            t=self.t, state=self.state,
        )


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.

@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    entries_checked: int
    worst_index: int


@dataclass
class GradcheckReport:
    tolerance: float
    checks: list[ParamCheck]

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tolerance

    def summary(self) -> str:
        lines = [
            f"  {c.name:<40s} max_rel_err={c.max_rel_err:.3e} "
            f"({c.entries_checked} entries)"
            for c in self.checks
        ]
        verdict = "OK" if self.ok else "FAIL"
        lines.append(
            f"  => {verdict}: worst {self.max_rel_err:.3e} vs tolerance "
            f"{self.tolerance:.1e}"
        )
        return "\n".join(lines)


def gradcheck(closure: Callable[[], torch.Tensor], params: Sequence[Param], *,
              tolerance=1e-4, step=1e-6, max_entries=24, seed=0) -> GradcheckReport:
    """Compare autograd gradients of a scalar closure to central differences.

    Entries are sampled for large tensors. Relative error uses a scale floor
    of 1e-3 in the denominator so that near-zero gradients are judged on a
    scaled-absolute basis instead of amplifying finite-difference noise.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != torch.float64:
            raise ValidationError(
                f"gradcheck requires float64 parameters; '{p.name}' is "
                f"{p.data.dtype}"
            )
        p.zero_grad()
    loss = closure()
    if loss.dim() != 0:
        raise ValidationError("closure must return a scalar")
    loss.backward()
    analytic = {
        p.name: (p.grad.detach().clone() if p.grad is not None
                 else torch.zeros_like(p.data))
        for p in params
    }
    checks = []
    for p in params:
        flat = p.data.detach().view(-1)
        grads = analytic[p.name].view(-1)
        numel = flat.numel()
        if numel <= max_entries:
            indices = list(range(numel))
        else:
            rng = random.Random(seed * 1000003 + zlib.crc32(p.name.encode()))
            indices = rng.sample(range(numel), max_entries)
        worst, worst_idx = 0.0, -1
        with torch.no_grad():
            for idx in indices:
                orig = flat[idx].item()
                flat[idx] = orig + step
                f_plus = float(closure())
                flat[idx] = orig - step
                f_minus = float(closure())
                flat[idx] = orig
                fd = (f_plus - f_minus) / (2 * step)
                g = grads[idx].item()
                rel = abs(fd - g) / max(abs(fd) + abs(g), 1e-3)
                if rel > worst:
                    worst, worst_idx = rel, idx
        checks.append(ParamCheck(p.name, worst, len(indices), worst_idx))
    return GradcheckReport(tolerance=tolerance, checks=checks)
