"""Dense 2-d float32 tensors with reverse-mode automatic differentiation.

Everything in this package computes on row-major float32 matrices: row
vectors are stored as 1 x n, scalars as 1 x 1.  Operations record onto an
active tape; ``backward`` replays the tape in reverse and accumulates
gradients into ``Tensor.grad``.  Matrix products and reductions accumulate
in float64 internally before rounding back to float32 storage, which keeps
finite-difference checks tight and makes key-order permutations of
attention inputs bit-neutral.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray

_REL_EPS = 1e-8  # denominator guard for relative errors

# Storage dtype: float32 everywhere in production.  finite_difference_check
# temporarily switches intermediates to float64 so that the per-coordinate
# relative-error formula is not swamped by storage rounding at coordinates
# whose true gradient is small.
_STORE = np.float32


@contextlib.contextmanager
def precise_mode():
    """Run newly created tensors and op outputs in float64."""
    global _STORE
    previous = _STORE
    _STORE = np.float64
    try:
        yield
    finally:
        _STORE = previous


def storage_dtype():
    return _STORE


def _acc(arr: Array) -> Array:
    # Under precise mode, lift float32 graph entries to float64 so entry-level
    # arithmetic does not round at storage precision.
    if _STORE is np.float64:
        return arr.astype(np.float64, copy=False)
    return arr


class Tensor:
    """A 2-d float32 array with optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_STORE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-d; got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of executed operations, in execution order.

    Execution order is a topological order by construction: an operation
    can only consume tensors that already exist.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []


_ACTIVE_TAPE = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _ACTIVE_TAPE


def reset_tape() -> None:
    """Drop all recorded operations; call once per training step."""
    _ACTIVE_TAPE.nodes.clear()


@contextlib.contextmanager
def scoped_tape():
    """Swap in a fresh tape for the duration of the block."""
    global _ACTIVE_TAPE
    previous = _ACTIVE_TAPE
    _ACTIVE_TAPE = Tape()
    try:
        yield _ACTIVE_TAPE
    finally:
        _ACTIVE_TAPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference, numeric probes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _record(inputs: tuple[Tensor, ...], out_data, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = TapeNode(inputs, out, backward_fn)
        out.node = node
        _ACTIVE_TAPE.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dT into ``grad`` for every reachable requires_grad tensor.

    Repeated calls without zeroing gradients add their contributions; each
    tape node is visited at most once per call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, Array] = {id(loss): np.ones((1, 1), dtype=np.float64)}
    holders: dict[int, Tensor] = {id(loss): loss}

    def settle(t: Tensor, g: Array) -> None:
        if t.grad is None:
            t.grad = np.array(g, dtype=t.data.dtype)  # owned copy
        else:
            t.grad += g

    for node in reversed(_ACTIVE_TAPE.nodes):
        out_id = id(node.output)
        g = pending.pop(out_id, None)
        if g is None:
            continue
        holders.pop(out_id)
        settle(node.output, g)
        for t, gin in zip(node.inputs, node.backward_fn(g)):
            if gin is None or not t.requires_grad:
                continue
            tid = id(t)
            if tid in pending:
                pending[tid] = pending[tid] + gin
            else:
                pending[tid] = gin
                holders[tid] = t
    for tid, g in pending.items():
        settle(holders[tid], g)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def backward_fn(g, a=a, b=b):
        ga = gb = None
        if a.requires_grad:
            ga = g @ _acc(b.data).T
        if b.requires_grad:
            gb = _acc(a.data).T @ g
        return ga, gb

    return _record((a, b), _acc(a.data) @ _acc(b.data), backward_fn)


def matmul64(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with float64 accumulation.

    Used where the summation index may be externally permuted (attention
    over keys/values), so that re-ordering the operands cannot change the
    rounded float32 result.
    """
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.data.astype(np.float64, copy=False) @ b.data.astype(np.float64, copy=False)

    def backward_fn(g, a=a, b=b):
        g64 = g.astype(np.float64, copy=False)
        ga = gb = None
        if a.requires_grad:
            ga = g64 @ b.data.astype(np.float64, copy=False).T
        if b.requires_grad:
            gb = a.data.astype(np.float64, copy=False).T @ g64
        return ga, gb

    return _record((a, b), out, backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1 x n bias row as ``b`` for an m x n ``a``."""
    bias_row = b.shape == (1, a.shape[1]) and a.shape[0] != 1
    if not bias_row and a.shape != b.shape:
        raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")
    out = _acc(a.data) + b.data

    def backward_fn(g, bias_row=bias_row):
        gb = g.sum(axis=0, keepdims=True, dtype=np.float64) if bias_row else g
        return g, gb

    return _record((a, b), out, backward_fn)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"subtract shapes disagree: {a.shape} vs {b.shape}")
    return _record((a, b), _acc(a.data) - b.data, lambda g: (g, -g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"multiply shapes disagree: {a.shape} vs {b.shape}")

    def backward_fn(g, a=a, b=b):
        return g * b.data, g * a.data

    return _record((a, b), _acc(a.data) * b.data, backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    k = _STORE(c)
    return _record((x,), _acc(x.data) * k, lambda g: (g * k,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient at exactly 0 is 0
    return _record((x,), np.where(mask, x.data, np.float32(0.0)), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU with the matching analytic derivative."""
    xd = _acc(x.data)
    dtype = xd.dtype.type
    c = dtype(_GELU_C)
    x2 = xd * xd
    u = c * (xd + dtype(0.044715) * x2 * xd)
    t = np.tanh(u)
    half = dtype(0.5)
    out = half * xd * (dtype(1.0) + t)

    def backward_fn(g, xd=xd, x2=x2, t=t, c=c, half=half, dtype=dtype):
        du = c * (dtype(1.0) + dtype(3 * 0.044715) * x2)
        d = half * (dtype(1.0) + t) + half * xd * (dtype(1.0) - t * t) * du
        return (g * d,)

    return _record((x,), out, backward_fn)


def transpose(x: Tensor) -> Tensor:
    return _record((x,), x.data.T, lambda g: (g.T,))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_rows needs at least one tensor")
    if len(parts) == 1:
        return parts[0]
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows column mismatch: {p.shape} vs {(parts[0].shape)}")
    sizes = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)

    def backward_fn(g, sizes=tuple(sizes)):
        grads = []
        off = 0
        for n in sizes:
            grads.append(g[off:off + n])
            off += n
        return tuple(grads)

    return _record(tuple(parts), out, backward_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    if len(parts) == 1:
        return parts[0]
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols row mismatch: {p.shape} vs {parts[0].shape}")
    sizes = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def backward_fn(g, sizes=tuple(sizes)):
        grads = []
        off = 0
        for n in sizes:
            grads.append(np.ascontiguousarray(g[:, off:off + n]))
            off += n
        return tuple(grads)

    return _record(tuple(parts), out, backward_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice; backward scatters into a zero matrix."""
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {x.shape}")

    def backward_fn(g, shape=x.shape, start=start, stop=stop):
        buf = np.zeros(shape, dtype=g.dtype)
        buf[:, start:stop] = g
        return (buf,)

    return _record((x,), x.data[:, start:stop], backward_fn)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table`` by index; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ContractError("embedding_lookup needs at least one index")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError(
            f"embedding index out of range [0, {table.shape[0]}) : "
            f"min={idx.min()} max={idx.max()}"
        )

    def backward_fn(g, table=table, idx=idx):
        if not table.requires_grad:
            return (None,)
        buf = np.zeros(table.shape, dtype=np.float64)
        np.add.at(buf, idx, g.astype(np.float64))
        return (buf.astype(np.float32),)

    return _record((table,), table.data[idx], backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Per-row softmax with max-subtraction for overflow safety."""
    z = x.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y64 = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g, y64=y64):
        g64 = g.astype(np.float64, copy=False)
        dot = (g64 * y64).sum(axis=1, keepdims=True)
        return (y64 * (g64 - dot),)

    return _record((x,), y64, backward_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def backward_fn(g, shape=x.shape, n=n):
        return (np.full(shape, g.reshape(())[()] / n, dtype=np.float64),)

    return _record((x,), x.data.mean(dtype=np.float64).reshape(1, 1), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    def backward_fn(g, shape=x.shape):
        return (np.full(shape, g.reshape(())[()], dtype=np.float64),)

    return _record((x,), x.data.sum(dtype=np.float64).reshape(1, 1), backward_fn)


def layer_norm_rows(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learnable 1 x n gain and shift."""
    n = x.shape[1]
    if gamma.shape != (1, n) or beta.shape != (1, n):
        raise ShapeError(f"layer norm affine must be 1 x {n}; got {gamma.shape}, {beta.shape}")
    xd = _acc(x.data)
    mu = xd.mean(axis=1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward_fn(g, xhat=xhat, inv=inv, gamma=gamma):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        dy = g * gamma.data
        dx = inv * (dy - dy.mean(axis=1, keepdims=True)
                    - xhat * (dy * xhat).mean(axis=1, keepdims=True))
        return dx, dgamma, dbeta

    return _record((x, gamma, beta), out, backward_fn)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale every row to unit Euclidean norm; rows with norm < eps are rejected."""
    x64 = x.data.astype(np.float64)
    norms = np.sqrt((x64 ** 2).sum(axis=1, keepdims=True))
    if (norms < eps).any():
        from .errors import NumericError

        raise NumericError("cannot normalize a (near-)zero row")
    y64 = x64 / norms

    def backward_fn(g, y64=y64, norms=norms):
        g64 = g.astype(np.float64, copy=False)
        dot = (g64 * y64).sum(axis=1, keepdims=True)
        return ((g64 - y64 * dot) / norms,)

    return _record((x,), y64, backward_fn)


def cross_entropy_logits(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean cross entropy over rows whose target is not ``ignore_index``."""
    t = np.asarray(targets, dtype=np.int64).ravel()
    if t.shape[0] != logits.shape[0]:
        raise ShapeError(f"targets length {t.shape[0]} != logits rows {logits.shape[0]}")
    valid = t != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ContractError("cross entropy needs at least one unignored target")
    rows = np.nonzero(valid)[0]
    if t[rows].min() < 0 or t[rows].max() >= logits.shape[1]:
        raise ShapeError(f"target id out of vocabulary range [0, {logits.shape[1]})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[rows, t[rows]].sum() / n_valid

    def backward_fn(g, logp=logp, rows=rows, t=t, valid=valid, n_valid=n_valid):
        G = np.exp(logp)
        G[rows, t[rows]] -= 1.0
        G[~valid] = 0.0
        G *= g.reshape(())[()] / n_valid
        return (G,)

    return _record((logits,), np.asarray(loss, dtype=np.float64).reshape(1, 1), backward_fn)


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float) -> float:
    """Max relative disagreement between backward() and central differences.

    ``f`` must be a pure scalar function of ``x`` (it may close over other
    tensors; only ``x`` is perturbed).  Returns
    max |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
    """
    if step <= 0:
        raise ContractError("finite difference step must be positive")
    with precise_mode(), scoped_tape():
        x.grad = None
        out = f(x)
        backward(out)
        analytic = (np.zeros(x.shape, dtype=np.float64) if x.grad is None
                    else x.grad.astype(np.float64))
    numeric = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with precise_mode(), no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(flat[i])
            f_hi = f(x).item()
            flat[i] = orig - step
            lo = float(flat[i])
            f_lo = f(x).item()
            flat[i] = orig
            num_flat[i] = (f_hi - f_lo) / (hi - lo)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + _REL_EPS)
    return float(rel.max())


# ---------------------------------------------------------------------------
# seeded initializers


def uniform_fan_in(rng: np.random.Generator, out_dim: int, in_dim: int) -> Tensor:
    bound = 1.0 / math.sqrt(in_dim)
    return parameter(rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(np.float32))


def normal_init(rng: np.random.Generator, rows: int, cols: int, std: float = 0.02) -> Tensor:
    return parameter((rng.standard_normal((rows, cols)) * std).astype(np.float32))


def zeros_param(rows: int, cols: int) -> Tensor:
    return parameter(np.zeros((rows, cols), dtype=np.float32))


def ones_param(rows: int, cols: int) -> Tensor:
    return parameter(np.ones((rows, cols), dtype=np.float32))
