"""A small reverse-mode autodiff engine on dense float64 numpy arrays.

Only the operations needed by the mesh networks are provided. Every op
returns a new :class:`Tensor`; when any input requires gradients the op
records a closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: sub(self, o)  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __neg__ = lambda self: scale(self, -1.0)  # noqa: E731


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_same(a, b, what):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{what}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _op(a.data * c, (a,), lambda g: (g * c,))


ROW_BLOCK = 128


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` where each output row depends only on its input row.

    BLAS picks different kernels for different row counts, so the same row
    can round differently inside a small and a large matrix. Running every
    product as a stack of fixed ``ROW_BLOCK``-row blocks keeps a graph's
    outputs bitwise identical whether it is processed alone or in a batch.
    """
    m = len(x)
    nb = max(1, -(-m // ROW_BLOCK))
    padded = np.zeros((nb * ROW_BLOCK, x.shape[1]), dtype=x.dtype)
    padded[:m] = x
    return (padded.reshape(nb, ROW_BLOCK, -1) @ w).reshape(nb * ROW_BLOCK, -1)[:m]


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _op(rowwise_matmul(a.data, b.data), (a, b),
               lambda g: (rowwise_matmul(g, b.data.T), a.data.T @ g))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    # gradient at exactly 0 is 0
    a = as_tensor(a)
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    # gradient at exactly 0 is ``slope``
    a = as_tensor(a)
    mask = a.data > 0
    factor = np.where(mask, 1.0, slope)
    return _op(a.data * factor, (a,), lambda g: (g * factor,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _op(a.data.sum(axis=axis), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    others = {tuple(s for k, s in enumerate(t.shape) if k != axis % t.data.ndim) for t in tensors}
    if len(others) > 1:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    splits = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
               lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------------------
# indexing and segment operations


def _scatter_rows(rows, index, n):
    out = np.zeros((n,) + rows.shape[1:], dtype=DTYPE)
    np.add.at(out, index, rows)
    return out


def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return _op(a.data[index], (a,), lambda g: (_scatter_rows(g, index, n),))


def segment_sum(rows, segments, n_targets: int) -> Tensor:
    """Sum rows into ``n_targets`` buckets; empty buckets are zero."""
    rows = as_tensor(rows)
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != rows.shape[0]:
        raise ValueError(f"segment_sum: {rows.shape[0]} rows but {len(segments)} segment ids")
    out = _scatter_rows(rows.data, segments, n_targets)
    return _op(out, (rows,), lambda g: (g[segments],))


def segment_mean(rows, segments, n_targets: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=n_targets).astype(DTYPE)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    shape = (n_targets,) + (1,) * (as_tensor(rows).data.ndim - 1)
    return mul(segment_sum(rows, segments, n_targets), inv.reshape(shape))


def segment_softmax(scores, segments, n_targets: int | None = None) -> Tensor:
    """Softmax of ``scores`` within each segment (along axis 0)."""
    scores = as_tensor(scores)
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != scores.shape[0]:
        raise ValueError(f"segment_softmax: {scores.shape[0]} scores but {len(segments)} segment ids")
    if n_targets is None:
        n_targets = int(segments.max()) + 1 if len(segments) else 0
    s = scores.data
    m = np.full((n_targets,) + s.shape[1:], -np.inf)
    np.maximum.at(m, segments, s)
    e = np.exp(s - m[segments])
    z = _scatter_rows(e, segments, n_targets)
    y = e / z[segments]

    def bw(g):
        dot = _scatter_rows(g * y, segments, n_targets)
        return (y * (g - dot[segments]),)

    return _op(y, (scores,), bw)


# ---------------------------------------------------------------------------
# normalisation and losses


def _norm_backward(g_hat, x_hat, inv_std, axis):
    m1 = g_hat.mean(axis=axis, keepdims=True)
    m2 = (g_hat * x_hat).mean(axis=axis, keepdims=True)
    return inv_std * (g_hat - m1 - x_hat * m2)


def group_norm(x, groups: int, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise each row within ``groups`` contiguous channel groups."""
    x = as_tensor(x)
    n, c = x.shape
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, c // groups)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = ((xg - mu) * inv_std).reshape(n, c)

    def bw(g):
        gh = g.reshape(n, groups, c // groups)
        return (_norm_backward(gh, x_hat.reshape(n, groups, c // groups), inv_std, 2).reshape(n, c),)

    out = _op(x_hat, (x,), bw)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def batch_norm(x, gain=None, bias=None, eps: float = 1e-5, running=None) -> Tensor:
    """Per-channel normalisation over rows.

    With ``running=(mean, var)`` those statistics are used as constants;
    otherwise the statistics of ``x`` itself are used.
    """
    x = as_tensor(x)
    if running is None:
        mu = x.data.mean(axis=0, keepdims=True)
        var = x.data.var(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mu) * inv_std
        out = _op(x_hat, (x,), lambda g: (_norm_backward(g, x_hat, inv_std, 0),))
    else:
        mu, var = running
        inv_std = 1.0 / np.sqrt(np.asarray(var) + eps)
        out = _op((x.data - mu) * inv_std, (x,), lambda g: (g * inv_std,))
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def log_softmax(logits) -> Tensor:
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _op(out, (logits,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if len(labels) != n:
        raise ValueError(f"cross_entropy: {n} rows but {len(labels)} labels")
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    lp = log_softmax(logits)
    picked = gather_rows(reshape(lp, (n * c,)), np.arange(n) * c + labels)
    return scale(sum(picked), -1.0 / n)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor):
    if loss._consumed:
        raise RuntimeError("backward already ran through this graph; rebuild the forward pass first")
    if not loss.requires_grad:
        raise RuntimeError("tensor is detached from every parameter; nothing to differentiate")
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar, got shape {loss.shape}")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True


def no_grad_value(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


# ---------------------------------------------------------------------------
# initialisation, optimisation, checking


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on ``params`` (dict name -> array).

    ``state`` holds ``t`` and per-name first/second moments; it is updated too.
    """
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        mk = m.get(name, np.zeros_like(p))
        vk = v.get(name, np.zeros_like(p))
        mk = beta1 * mk + (1.0 - beta1) * g
        vk = beta2 * vk + (1.0 - beta2) * g * g
        m[name], v[name] = mk, vk
        p -= lr * (mk / c1) / (np.sqrt(vk / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params  # name -> Parameter
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {"t": 0, "m": {}, "v": {}}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(arrays, grads, self.state, self.lr, *self.betas, self.eps)


def finite_diff_gradcheck(f, params, eps: float = 1e-5, n_coords: int = 200, seed: int = 0,
                          floor: float = 1e-8):
    """Compare backprop gradients with central differences.

    ``f()`` must rebuild the forward pass and return a scalar Tensor.
    ``params`` maps names to Parameters. Up to ``n_coords`` coordinates are
    sampled uniformly over all parameters. Returns ``(max_rel_err, records)``
    with ``rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    params = dict(params)
    for p in params.values():
        p.grad = None
    backward(f())
    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    records = []
    worst = 0.0
    for name, i in coords:
        p = params[name]
        flat = p.data.reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        fp = float(f().data)
        flat[i] = old - eps
        fm = float(f().data)
        flat[i] = old
        numeric = (fp - fm) / (2 * eps)
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
        records.append((name, i, analytic, numeric, rel))
    return worst, records
