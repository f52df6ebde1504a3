"""Dense float tensors plus reverse-mode autodiff on a recorded tape.

A Graph owns one forward pass: every op appends (output, backward_fn) to the
tape, so construction order is already topological order. backward() walks
the tape once in reverse and accumulates gradients with +=, which makes
fan-out (one tensor feeding several consumers) come out right by
construction. Graphs are single-threaded and throwaway; training builds a
fresh one per batch.

Training runs in float32. Every op also works on float64 tensors so gradient
checks can separate autodiff bugs from roundoff.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """N-dimensional float array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")


def zero_grads(tensors) -> None:
    """Drop gradient buffers; the next backward pass starts from zero."""
    for t in tensors:
        t.grad = None


def _same_dtype(*tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ContractError(f"mixed dtypes in op: {dt} vs {t.dtype}")
    return dt


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient over leading axes so it matches a broadcast input."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


class Graph:
    """Tape of recorded ops for one forward/backward pass.

    record=False skips tape bookkeeping entirely (validation, decoding).
    """

    def __init__(self, record: bool = True):
        self.record = bool(record)
        self._tape: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    # -- tape plumbing -------------------------------------------------

    def _emit(self, inputs: tuple, out: Tensor, bwd) -> Tensor:
        if self.record and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._tape.append((out, bwd))
        return out

    @staticmethod
    def _accum(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and push gradients back through the tape."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, bwd in reversed(self._tape):
            if out.grad is None:
                continue
            bwd(out.grad)

    # -- primitives ----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Matrix product over the trailing two axes.

        Leading (batch) axes must match exactly, or be absent on one side.
        """
        _same_dtype(a, b)
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ShapeError(f"matmul needs rank >= 2 operands: {a.shape} vs {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
        la, lb = a.shape[:-2], b.shape[:-2]
        if la and lb and la != lb:
            raise ShapeError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
        out = Tensor(a.data @ b.data)

        def bwd(go: np.ndarray):
            self._accum(a, _sum_to(go @ _swap(b.data), a.shape))
            self._accum(b, _sum_to(_swap(a.data) @ go, b.shape))

        return self._emit((a, b), out, bwd)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; b may broadcast if its shape is a suffix of a's."""
        _same_dtype(a, b)
        k = len(b.shape)
        if a.shape != b.shape and a.shape[len(a.shape) - k:] != b.shape:
            raise ShapeError(f"add shapes incompatible: {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data)

        def bwd(go: np.ndarray):
            self._accum(a, go)
            g = go if b.shape == a.shape else go.reshape(-1, *b.shape).sum(axis=0) if k else go.sum()
            self._accum(b, np.asarray(g))

        return self._emit((a, b), out, bwd)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise product, same shapes only."""
        _same_dtype(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
        out = Tensor(a.data * b.data)

        def bwd(go: np.ndarray):
            self._accum(a, go * b.data)
            self._accum(b, go * a.data)

        return self._emit((a, b), out, bwd)

    def scale(self, a: Tensor, s: float) -> Tensor:
        s = float(s)
        out = Tensor(a.data * s)

        def bwd(go: np.ndarray):
            self._accum(a, go * s)

        return self._emit((a,), out, bwd)

    def relu(self, a: Tensor) -> Tensor:
        out = Tensor(np.maximum(a.data, 0))
        gate = a.data > 0

        def bwd(go: np.ndarray):
            self._accum(a, go * gate)

        return self._emit((a,), out, bwd)

    def softmax(self, a: Tensor, axis: int = -1) -> Tensor:
        """Max-subtracted exp-normalize along one axis."""
        nd = a.data.ndim
        if not -nd <= axis < nd:
            raise ShapeError(f"softmax axis {axis} out of range for rank {nd}")
        ax = axis % nd
        m = a.data.max(axis=ax, keepdims=True)
        e = np.exp(a.data - m)
        y = e / e.sum(axis=ax, keepdims=True)
        out = Tensor(y)

        def bwd(go: np.ndarray):
            s = (go * y).sum(axis=ax, keepdims=True)
            self._accum(a, y * (go - s))

        return self._emit((a,), out, bwd)

    def layer_norm(self, x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
        """Normalize the last axis to zero mean / unit variance, then affine."""
        _same_dtype(x, gain, bias)
        d = x.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                             f"do not match feature dim {d}")
        mu = x.data.mean(axis=-1, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = Tensor(gain.data * xhat + bias.data)

        def bwd(go: np.ndarray):
            dxhat = go * gain.data
            s1 = dxhat.sum(axis=-1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            self._accum(x, (inv / d) * (d * dxhat - s1 - xhat * s2))
            self._accum(gain, (go * xhat).reshape(-1, d).sum(axis=0))
            self._accum(bias, go.reshape(-1, d).sum(axis=0))

        return self._emit((x, gain, bias), out, bwd)

    def embedding(self, table: Tensor, ids) -> Tensor:
        """Gather rows of table by integer id; grads scatter-add back."""
        idx = np.asarray(ids)
        if not np.issubdtype(idx.dtype, np.integer):
            raise ContractError(f"embedding ids must be integers, got {idx.dtype}")
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise IndexError(f"token id out of range [0, {table.shape[0]}): "
                             f"min {idx.min()}, max {idx.max()}")
        out = Tensor(table.data[idx])

        def bwd(go: np.ndarray):
            if not table.requires_grad:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx.reshape(-1), go.reshape(-1, table.shape[1]))

        return self._emit((table,), out, bwd)

    def reshape(self, a: Tensor, shape: tuple) -> Tensor:
        out = Tensor(a.data.reshape(shape))

        def bwd(go: np.ndarray):
            self._accum(a, go.reshape(a.shape))

        return self._emit((a,), out, bwd)

    def transpose(self, a: Tensor, axes: tuple) -> Tensor:
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = Tensor(a.data.transpose(axes))

        def bwd(go: np.ndarray):
            self._accum(a, go.transpose(inv))

        return self._emit((a,), out, bwd)

    def sum(self, a: Tensor) -> Tensor:
        """Full reduction to a 0-rank scalar."""
        out = Tensor(a.data.sum())

        def bwd(go: np.ndarray):
            self._accum(a, np.broadcast_to(go, a.shape).copy())

        return self._emit((a,), out, bwd)

    def cross_entropy(self, logits: Tensor, targets, pad_mask) -> Tensor:
        """Mean negative log-likelihood over unmasked positions.

        logits [B,T,V], integer targets [B,T], boolean pad_mask [B,T]
        (True = position counts). A fully masked batch yields loss 0 with
        zero gradient.
        """
        ld = logits.data
        if ld.ndim != 3:
            raise ShapeError(f"cross_entropy expects [B,T,V] logits, got {logits.shape}")
        tgt = np.asarray(targets)
        msk = np.asarray(pad_mask)
        if msk.dtype != np.bool_:
            raise ContractError(f"pad_mask must be boolean, got {msk.dtype}")
        if not np.issubdtype(tgt.dtype, np.integer):
            raise ContractError(f"targets must be integers, got {tgt.dtype}")
        bt = ld.shape[:2]
        if tgt.shape != bt or msk.shape != bt:
            raise ShapeError(f"targets {tgt.shape} / pad_mask {msk.shape} "
                             f"do not match logits {logits.shape}")
        vocab = ld.shape[2]
        if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
            raise IndexError(f"target id out of range [0, {vocab}): "
                             f"min {tgt.min()}, max {tgt.max()}")
        n = int(msk.sum())
        if n == 0:
            return Tensor(np.zeros((), dtype=ld.dtype))

        m = ld.max(axis=-1, keepdims=True)
        e = np.exp(ld - m)
        z = e.sum(axis=-1, keepdims=True)
        logp = ld - m - np.log(z)
        bi = np.arange(bt[0])[:, None]
        ti = np.arange(bt[1])[None, :]
        nll = -logp[bi, ti, tgt]
        out = Tensor((nll * msk).sum() / n)

        def bwd(go: np.ndarray):
            gl = e / z
            gl[bi, ti, tgt] -= 1.0
            gl *= msk[..., None] * (go / n)
            self._accum(logits, gl)

        return self._emit((logits,), out, bwd)


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f(graph, tensor) must return a scalar Tensor. Runs in x's dtype; pass a
    float64 tensor for tight tolerances. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    g = Graph()
    xa = Tensor(x.data.copy(), requires_grad=True)
    out = f(g, xa)
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
    g.backward(out)
    analytic = xa.grad.copy() if xa.grad is not None else np.zeros_like(x.data)

    base = x.data.copy()
    flat = base.reshape(-1)
    numeric = np.zeros_like(base)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hp = float(flat[i]) - float(orig)
        fp = f(Graph(record=False), Tensor(base.copy())).data.item()
        flat[i] = orig - eps
        hm = float(orig) - float(flat[i])
        fm = f(Graph(record=False), Tensor(base.copy())).data.item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (hp + hm)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
