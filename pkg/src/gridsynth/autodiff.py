"""Dense-tensor reverse-mode automatic differentiation.

Small on purpose: row-major float64 arrays, explicit operations, and no
broadcasting beyond bias addition and scalar multiply, so the recorded
graph stays auditable. Backward rules are themselves written in terms of
tensor operations; running the engine with ``create_graph=True`` therefore
records a differentiable graph for the gradients, which is what lets the
critic's gradient-norm penalty be differentiated with respect to the
critic parameters (double backprop).
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError, SchemaError

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


class _enable_grad:
    def __enter__(self):
        _GRAD_ENABLED.append(True)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


class Tensor:
    """A dense array plus an optional autodiff graph node."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, create_graph=False):
        backward(self, create_graph=create_graph)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic (scalars or same-shape tensors)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _make(data, parents, backward_fn):
    track = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=parents, _backward_fn=backward_fn)
    return Tensor(data)


# --- primitives -----------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum; the second operand may be a bias vector or scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        out_data = a.data + b.data

        def back(g):
            return g, g

    elif b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]:
        out_data = a.data + b.data[None, :]

        def back(g):
            return g, sum_axis0(g)

    elif b.size == 1:
        out_data = a.data + b.data.reshape(())

        def back(g):
            return g, _sum_to_scalar_shape(g, b.shape)

    else:
        raise SchemaError(f"add: incompatible shapes {a.shape} vs {b.shape}")
    return _make(out_data, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    """Elementwise product; either operand may be scalar-sized."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        out_data = a.data * b.data
    elif b.size == 1:
        out_data = a.data * b.data.reshape(())
    elif a.size == 1:
        out_data = a.data.reshape(()) * b.data
    else:
        raise SchemaError(f"mul: incompatible shapes {a.shape} vs {b.shape}")

    def back(g):
        ga = _sum_to(mul(g, b), a.shape)
        gb = _sum_to(mul(g, a), b.shape)
        return ga, gb

    return _make(out_data, (a, b), back)


def _sum_to(t: Tensor, shape) -> Tensor:
    if t.shape == shape:
        return t
    if int(np.prod(shape)) == 1:
        return _sum_to_scalar_shape(t, shape)
    raise SchemaError(f"cannot reduce {t.shape} to {shape}")


def _sum_to_scalar_shape(t, shape):
    s = sum_all(t)
    if shape == ():
        return s
    return reshape(s, shape)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise SchemaError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def back(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T.copy(), (a,), lambda g: (transpose(g),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (mul(g, mask),))


def _make_with_out(data, parents, back_builder):
    """Node whose backward rule references the output tensor itself.

    Required for second-order correctness: the derivative of e.g. tanh is
    expressed through the (tracked) output, so differentiating the first
    backward pass still reaches the inputs.
    """
    out = _make(data, parents, None)
    if out.requires_grad:
        out._backward_fn = back_builder(out)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def builder(out):
        return lambda g: (mul(g, mul(out, add(neg(out), 1.0))),)

    return _make_with_out(out_data, (a,), builder)


def tanh(a) -> Tensor:
    a = as_tensor(a)

    def builder(out):
        return lambda g: (mul(g, add(neg(square(out)), 1.0)),)

    return _make_with_out(np.tanh(a.data), (a,), builder)


def exp(a) -> Tensor:
    a = as_tensor(a)

    def builder(out):
        return lambda g: (mul(g, out),)

    return _make_with_out(np.exp(a.data), (a,), builder)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (mul(g, reciprocal(a)),))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)

    def builder(out):
        return lambda g: (neg(mul(g, square(out))),)

    return _make_with_out(1.0 / a.data, (a,), builder)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data**2, (a,), lambda g: (mul(g, mul(a, 2.0)),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)

    def builder(out):
        return lambda g: (mul(g, mul(reciprocal(out), 0.5)),)

    return _make_with_out(np.sqrt(a.data), (a,), builder)


def clamp(a, lo, hi) -> Tensor:
    a = as_tensor(a)
    mask = Tensor(((a.data >= lo) & (a.data <= hi)).astype(np.float64))
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, mask),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(np.float64(a.data.sum()), (a,), lambda g: (expand_to(g, shape),))


def expand_to(scalar, shape) -> Tensor:
    """Broadcast a scalar tensor to an arbitrary shape (inverse of sum_all)."""
    scalar = as_tensor(scalar)
    if scalar.size != 1:
        raise SchemaError("expand_to expects a scalar")
    return _make(
        np.full(shape, scalar.data.reshape(())), (scalar,), lambda g: (sum_all(g),)
    )


def sum_axis0(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise SchemaError("sum_axis0 expects a matrix")
    n = a.shape[0]
    return _make(a.data.sum(axis=0), (a,), lambda g: (expand_rows(g, n),))


def expand_rows(a, n) -> Tensor:
    """(d,) -> (n, d) row tiling."""
    a = as_tensor(a)
    return _make(np.tile(a.data, (n, 1)), (a,), lambda g: (sum_axis0(g),))


def sum_axis1(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise SchemaError("sum_axis1 expects a matrix")
    k = a.shape[1]
    return _make(a.data.sum(axis=1), (a,), lambda g: (expand_cols(g, k),))


def expand_cols(a, k) -> Tensor:
    """(n,) -> (n, k) column tiling."""
    a = as_tensor(a)
    return _make(np.tile(a.data[:, None], (1, k)), (a,), lambda g: (sum_axis1(g),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(sum_all(a), 1.0 / a.size)


def slice_cols(a, start, stop) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise SchemaError("slice_cols expects a matrix")
    total = a.shape[1]
    return _make(
        a.data[:, start:stop].copy(), (a,), lambda g: (pad_cols(g, start, total),)
    )


def pad_cols(a, start, total) -> Tensor:
    a = as_tensor(a)
    n, k = a.shape
    out_data = np.zeros((n, total))
    out_data[:, start : start + k] = a.data
    return _make(out_data, (a,), lambda g: (slice_cols(g, start, start + a.shape[1]),))


def concat_cols(parts) -> Tensor:
    """Column-wise concatenation of matrices with equal row counts."""
    parts = [as_tensor(p) for p in parts]
    if any(p.data.ndim != 2 for p in parts):
        raise SchemaError("concat_cols expects matrices")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def back(g):
        return tuple(slice_cols(g, int(offsets[i]), int(offsets[i + 1])) for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


def concat(a, b, axis=1) -> Tensor:
    if axis != 1:
        raise SchemaError("only column concatenation is supported")
    return concat_cols([a, b])


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)
    k = out_data.shape[1]

    def builder(out):
        def back(g):
            inner = sum_axis1(mul(g, out))
            return (mul(out, sub(g, expand_cols(inner, k))),)

        return back

    return _make_with_out(out_data, (a,), builder)


def embedding(table, indices) -> Tensor:
    """Row lookup into a learned table. First-order gradients only."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)

    def back(g):
        grad_data = np.zeros_like(table.data)
        np.add.at(grad_data, idx, g.data)
        return (Tensor(grad_data),)

    return _make(table.data[idx], (table,), back)


def l2_norm_rows(a) -> Tensor:
    """Euclidean norm of each row: (n, d) -> (n,)."""
    return sqrt(sum_axis1(square(a)))


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise SchemaError(f"mse: shapes {a.shape} vs {b.shape}")
    return mean(square(sub(a, b)))


def bce(p, y) -> Tensor:
    """Binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].

    p must already lie in (0, 1) up to that clamp; inputs outside [0, 1]
    are rejected.
    """
    p, y = as_tensor(p), as_tensor(y)
    if p.shape != y.shape:
        raise SchemaError(f"bce: shapes {p.shape} vs {y.shape}")
    if np.any(p.data < 0.0) or np.any(p.data > 1.0):
        raise SchemaError("bce: probabilities outside [0, 1]")
    q = clamp(p, 1e-7, 1.0 - 1e-7)
    term = add(mul(y, log(q)), mul(add(neg(y), 1.0), log(add(neg(q), 1.0))))
    return neg(mean(term))


# --- engine ---------------------------------------------------------------


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order  # inputs before outputs


def _run_engine(root, seed, create_graph):
    order = _topo_order(root)
    grads = {id(root): seed}
    ctx = _enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = add(grads[id(parent)], pg)
                else:
                    grads[id(parent)] = pg
    return grads, order


def backward(loss: Tensor, create_graph=False):
    """Accumulate d(loss)/d(leaf) into .grad for every tracked leaf."""
    if loss.size != 1:
        raise SchemaError("backward expects a scalar loss")
    if not loss.requires_grad:
        return
    seed = Tensor(np.ones(loss.shape))
    grads, order = _run_engine(loss, seed, create_graph)
    for node in order:
        if node._backward_fn is None and node.requires_grad and id(node) in grads:
            g = grads[id(node)]
            node.grad = g if node.grad is None else add(node.grad, g)


def grad(output: Tensor, inputs, create_graph=False):
    """Gradients of a scalar output w.r.t. specific tensors (grad not stored)."""
    if output.size != 1:
        raise SchemaError("grad expects a scalar output")
    seed = Tensor(np.ones(output.shape))
    grads, _ = _run_engine(output, seed, create_graph)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape))
        result.append(g)
    return result


# --- layers / models ------------------------------------------------------

_ACTIVATIONS = {
    "relu": relu,
    "identity": lambda t: t,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


class Layer:
    """Affine layer with optional spectral normalization state."""

    def __init__(self, weight, bias, activation="relu", spectral_norm=False):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if activation not in _ACTIVATIONS:
            raise SchemaError(f"unknown activation {activation!r}")
        self.activation = activation
        self.spectral_norm = spectral_norm
        fan_out = self.weight.shape[1]
        u = np.ones(fan_out) / np.sqrt(fan_out)
        self.u = u  # persistent power-iteration vector

    def effective_weight(self):
        if not self.spectral_norm:
            return self.weight
        w = self.weight
        wu = w.data @ self.u
        nv = np.linalg.norm(wu)
        v = wu / nv if nv > 0 else np.zeros_like(wu)
        v_row = Tensor(v[None, :])
        u_col = Tensor(self.u[:, None])
        sigma = matmul(matmul(v_row, w), u_col)  # (1,1), gradient flows via w
        sigma = clamp(sigma, 1e-12, np.inf)
        return mul(w, reciprocal(sigma))

    def sigma_estimate(self) -> float:
        w = self.weight.data
        wu = w @ self.u
        nv = np.linalg.norm(wu)
        if nv == 0:
            return 1e-12
        v = wu / nv
        return max(float(v @ w @ self.u), 1e-12)

    def power_iteration_step(self, iters=1):
        w = self.weight.data
        for _ in range(iters):
            v = w @ self.u
            nv = np.linalg.norm(v)
            if nv == 0:
                return
            v /= nv
            u = w.T @ v
            nu = np.linalg.norm(u)
            if nu == 0:
                return
            self.u = u / nu


def spectral_normalize(layer: Layer, iters=1):
    """Run power iterations and return the sigma estimate used in forward."""
    layer.power_iteration_step(iters)
    return layer.sigma_estimate()


class Mlp:
    """Fully connected network over the Tensor ops."""

    def __init__(self, dims, activations=None, spectral_norm=False, rng=None):
        rng = rng or np.random.default_rng(0)
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise SchemaError("one activation per layer required")
        self.layers = []
        for i in range(n_layers):
            fan_in, fan_out = dims[i], dims[i + 1]
            scale = np.sqrt(2.0 / fan_in) if activations[i] == "relu" else np.sqrt(1.0 / fan_in)
            w = Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            self.layers.append(Layer(w, b, activations[i], spectral_norm))

    def forward(self, x: Tensor) -> Tensor:
        h = as_tensor(x)
        for layer in self.layers:
            h = add(matmul(h, layer.effective_weight()), layer.bias)
            h = _ACTIVATIONS[layer.activation](h)
        return h

    __call__ = forward

    def parameters(self):
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def power_iteration_step(self):
        for layer in self.layers:
            if layer.spectral_norm:
                layer.power_iteration_step()

    def state_arrays(self):
        out = []
        for layer in self.layers:
            out.append(layer.weight.data.copy())
            out.append(layer.bias.data.copy())
        return out

    def load_state_arrays(self, arrays):
        expected = 2 * len(self.layers)
        if len(arrays) != expected:
            raise SchemaError(f"expected {expected} arrays, got {len(arrays)}")
        for i, layer in enumerate(self.layers):
            layer.weight.data = np.asarray(arrays[2 * i], dtype=np.float64).copy()
            layer.bias.data = np.asarray(arrays[2 * i + 1], dtype=np.float64).copy()


def zero_grads(params):
    for p in params:
        p.grad = None


class Adam:
    """Adam with bias correction; eps pinned at 1e-8."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.data
            if not np.all(np.isfinite(g)):
                raise DivergenceError(None, "non-finite gradient in Adam step")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**self.t)
            v_hat = self.v[i] / (1.0 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)


def adam_step(state: Adam, params=None, grads=None):
    """Functional wrapper over Adam.step; grads land in params first."""
    if params is not None and grads is not None:
        for p, g in zip(params, grads):
            p.grad = g if isinstance(g, Tensor) else Tensor(g)
    state.step()
    return state


def gradient_penalty(critic: Mlp, real_batch, fake_batch, rng) -> Tensor:
    """Mean squared distance of interpolate gradient norms from 1.

    Interpolation weights are drawn uniformly per row. The result is
    differentiable with respect to the critic parameters.
    """
    real = as_tensor(real_batch).data
    fake = as_tensor(fake_batch).data
    if real.shape != fake.shape:
        raise SchemaError(f"gradient_penalty: shapes {real.shape} vs {fake.shape}")
    u = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    interp = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    out = critic(interp)
    total = sum_all(out)
    (g_interp,) = grad(total, [interp], create_graph=True)
    norms = l2_norm_rows(g_interp)
    return mean(square(sub(norms, 1.0)))


def ema_update(ema_arrays, params, decay):
    """In-place exponential moving average of parameter arrays."""
    for e, p in zip(ema_arrays, params):
        e *= decay
        e += (1.0 - decay) * p.data


class EmaTracker:
    """Debiased exponential moving average of parameters.

    Accumulators start at zero and are divided by (1 - decay^t) when
    materialized, so early snapshots are proper weighted averages of the
    trajectory instead of leaning on the random initialization.
    """

    def __init__(self, params, decay):
        self.decay = decay
        self.t = 0
        self.raw = [np.zeros_like(p.data) for p in params]

    def update(self, params):
        self.t += 1
        for e, p in zip(self.raw, params):
            e *= self.decay
            e += (1.0 - self.decay) * p.data

    def arrays(self):
        if self.t == 0:
            return [e.copy() for e in self.raw]
        corr = 1.0 - self.decay**self.t
        return [e / corr for e in self.raw]
