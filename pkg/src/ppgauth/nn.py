"""Minimal dense array engine with reverse-mode autodiff and Adam.

Tensors wrap contiguous float64 numpy storage. Every operation records a
backward closure and a creation index; `backward()` replays closures in
exact reverse creation order, so gradients are bit-deterministic for
identical inputs. The op set is exactly what the dual-path network
needs: conv1d, linear, batchnorm, SE gating, pooling, activations,
l2 normalization and binary cross-entropy.
"""

import itertools
import json

import numpy as np

from .errors import ArgumentError, ConfigurationError, SchemaVersionError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1

_op_counter = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op_id")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d.
        if not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()
        self._op_id = next(_op_counter)

    @property
    def shape(self):
        return self.data.shape

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor through the recorded graph."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(grad, dtype=np.float64).reshape(self.data.shape))

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        # Exact reverse execution order.
        for t in sorted(nodes, key=lambda t: t._op_id, reverse=True):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def sum_along(x, axis):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _result(data, (x,), backward)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _result(data, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * data * (1.0 - data))

    return _result(data, (x,), backward)


# ---------------------------------------------------------------------------
# Layer operations
# ---------------------------------------------------------------------------


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding="valid"):
    """Cross-correlation over [B, Cin, L] with kernels [Cout, Cin, K].

    "same" padding requires stride 1 and preserves L; "valid" yields
    L' = floor((L - dilation*(K-1) - 1) / stride) + 1.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d input must be 3-D, got {x.data.ndim}-D")
    B, Cin, L = x.data.shape
    Cout, Cin_w, K = weight.data.shape
    if Cin != Cin_w:
        raise ShapeError(f"input channels {Cin} != weight channels {Cin_w}")
    if bias is not None and bias.data.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({Cout},)")
    span = dilation * (K - 1) + 1
    if padding == "same":
        if stride != 1:
            raise ArgumentError("same padding requires stride 1")
        total = span - 1
        left = total // 2
        xp = np.pad(x.data, ((0, 0), (0, 0), (left, total - left)))
    elif padding == "valid":
        left = 0
        xp = x.data
    else:
        raise ArgumentError(f"unknown padding {padding!r}")
    Lp = xp.shape[2]
    if Lp < span:
        raise ShapeError(f"input length {L} shorter than kernel span {span}")
    Lout = (Lp - span) // stride + 1

    # im2col via stride tricks, then one BLAS matmul.
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, Cin, K, Lout),
        strides=(s0, s1, s2 * dilation, s2 * stride),
        writeable=False,
    )
    w2 = weight.data.reshape(Cout, Cin * K)
    cols2 = np.ascontiguousarray(cols.reshape(B, Cin * K, Lout))
    out = np.matmul(w2, cols2)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        if weight.requires_grad:
            gw = np.matmul(g, cols2.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(gw.reshape(Cout, Cin, K))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g).reshape(B, Cin, K, Lout)
            gxp = np.zeros_like(xp)
            for k in range(K):
                off = k * dilation
                gxp[:, :, off : off + stride * Lout : stride] += gcols[:, :, k, :]
            if left or xp.shape[2] != L:
                gxp = gxp[:, :, left : left + L]
            x.accumulate_grad(gxp)

    return _result(out, tuple(t for t in (x, weight, bias) if t is not None), backward)


def linear(x, weight, bias=None):
    """Affine map: [B, N] x [M, N]^T + [M]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"linear input must be 2-D, got {x.data.ndim}-D")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"input features {x.data.shape[1]} != weight features {weight.data.shape[1]}"
        )
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return _result(out, tuple(t for t in (x, weight, bias) if t is not None), backward)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel normalization over (B, L) for [B, C, L] inputs.

    Training mode normalizes with batch statistics and updates the running
    arrays in place; eval mode uses the running statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    B, C, L = x.data.shape
    if training:
        if B * L < 2:
            raise ArgumentError("batchnorm training needs B*L >= 2")
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None]) * inv[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2)))
        if x.requires_grad:
            if training:
                n = B * L
                gxhat = g * gamma.data[None, :, None]
                s1 = gxhat.sum(axis=(0, 2))
                s2 = (gxhat * xhat).sum(axis=(0, 2))
                gx = (
                    gxhat - (s1[None, :, None] + xhat * s2[None, :, None]) / n
                ) * inv[None, :, None]
            else:
                gx = g * (gamma.data * inv)[None, :, None]
            x.accumulate_grad(gx)

    return _result(out, (x, gamma, beta), backward)


def global_avg_pool(x):
    """[B, C, L] -> [B, C] mean over the length axis."""
    x = _as_tensor(x)
    B, C, L = x.data.shape
    out = x.data.mean(axis=2)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(g[:, :, None], L, axis=2) / L)

    return _result(out, (x,), backward)


def maxpool1d(x, kernel=2, stride=2):
    """Valid max pooling; gradient routes to the argmax (first index on ties)."""
    x = _as_tensor(x)
    B, C, L = x.data.shape
    Lout = (L - kernel) // stride + 1
    if Lout < 1:
        raise ShapeError(f"input length {L} shorter than pooling kernel {kernel}")
    idx = np.arange(Lout) * stride
    windows = np.stack([x.data[:, :, idx + k] for k in range(kernel)], axis=3)
    arg = windows.argmax(axis=3)  # argmax takes the first index on ties
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            src = idx[None, None, :] + arg
            np.add.at(
                gx,
                (
                    np.arange(B)[:, None, None],
                    np.arange(C)[None, :, None],
                    src,
                ),
                g,
            )
            x.accumulate_grad(gx)

    return _result(out, (x,), backward)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                t.accumulate_grad(g[tuple(sl)])
            offset += size

    return _result(data, tuple(tensors), backward)


def l2_normalize(x, axis=1, eps=1e-12):
    x = _as_tensor(x)
    norm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True) + eps)
    out = x.data / norm

    def backward(g):
        if x.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            x.accumulate_grad((g - out * dot) / norm)

    return _result(out, (x,), backward)


def se_block(x, w1, w2):
    """Squeeze-and-excitation channel gating for [B, C, L] inputs.

    squeeze = mean over L; excite = sigmoid(w2 @ relu(w1 @ squeeze));
    output rescales each channel by its excitation.
    """
    x, w1, w2 = _as_tensor(x), _as_tensor(w1), _as_tensor(w2)
    C = x.data.shape[1]
    if w1.data.shape[1] != C or w2.data.shape[0] != C:
        raise ConfigurationError(
            f"SE weights {w1.data.shape}/{w2.data.shape} do not match {C} channels"
        )
    squeeze = global_avg_pool(x)
    hidden = relu(linear(squeeze, w1))
    excite = sigmoid(linear(hidden, w2))  # [B, C]

    scale = excite.data[:, :, None]
    out_data = x.data * scale

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * scale)
        if excite.requires_grad:
            excite.accumulate_grad((g * x.data).sum(axis=2))

    out = _result(out_data, (x, excite), backward)
    return out


def bce_loss(pred, target):
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7]."""
    pred = _as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {pred.data.shape}")
    lo, hi = 1e-7, 1.0 - 1e-7
    p = np.clip(pred.data, lo, hi)
    inside = (pred.data > lo) & (pred.data < hi)
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))

    def backward(g):
        if pred.requires_grad:
            gp = (-(t / p) + (1.0 - t) / (1.0 - p)) / p.size
            pred.accumulate_grad(g * gp * inside)

    return _result(np.array(loss), (pred,), backward)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def adam_step(param, grad, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; mutates `param` and `state`.

    `state` is a dict holding per-parameter "m", "v" and step count "t".
    """
    if "m" not in state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad**2
    mhat = state["m"] / (1.0 - beta1**t)
    vhat = state["v"] / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
    return param


class Adam:
    """Adam over a named parameter dict, with per-name update subsets.

    Passing `names` to `step` updates only those parameters; untouched
    parameters keep their state and values bit-identical, which is what
    the mode-isolation contract of switch training relies on.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {name: {} for name in self.params}

    def step(self, names=None):
        for name in names if names is not None else self.params:
            p = self.params[name]
            if p.grad is None:
                continue
            adam_step(
                p.data, p.grad, self.state[name],
                lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------


def save_checkpoint(path, arrays, meta=None):
    """Write named arrays + metadata as structured text; round-trips exactly."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(np.shape(a)), "values": np.asarray(a).ravel().tolist()}
            for name, a in arrays.items()
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise SchemaVersionError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    arrays = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
    return arrays, payload["meta"]
