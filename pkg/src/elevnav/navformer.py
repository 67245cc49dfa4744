"""Attention-based state-value network with hand-derived gradients.

Per-human rows are embedded by a small MLP, mixed by one self-attention
encoder block, and reduced to a single scalar weight per human (softmax).
The weighted sum of the *pre-encoder* embeddings is concatenated with the
robot state and scored by the value MLP.  All math is float64 numpy; the
backward pass mirrors the forward exactly, so gradients are analytic rather
than autograd-generated.

forward/backward only read the parameters and may run concurrently;
sgd_step mutates them and needs exclusive access.
"""

import struct

import numpy as np

from .core import FormatError, TrainingFaultError

_LN_EPS = 1e-5
_MAGIC = b"NAVF"
_VERSION = 1


class ValueNet:
    """Parameter container; layer widths are fixed at construction."""

    def __init__(self, seed=0, input_dim=12, robot_dim=5, embed_hidden=150,
                 d_model=100, n_heads=4, ff_dim=150, value_hidden=100):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.input_dim = input_dim
        self.robot_dim = robot_dim
        self.embed_hidden = embed_hidden
        self.d_model = d_model
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.value_hidden = value_hidden

        rng = np.random.default_rng(seed)

        def dense(fan_in, fan_out):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, size=(fan_in, fan_out))

        vh = value_hidden
        self.params = {
            "embed.W1": dense(input_dim, embed_hidden),
            "embed.b1": np.zeros(embed_hidden),
            "embed.W2": dense(embed_hidden, d_model),
            "embed.b2": np.zeros(d_model),
            "attn.Wq": dense(d_model, d_model),
            "attn.bq": np.zeros(d_model),
            "attn.Wk": dense(d_model, d_model),
            "attn.bk": np.zeros(d_model),
            "attn.Wv": dense(d_model, d_model),
            "attn.bv": np.zeros(d_model),
            "attn.Wo": dense(d_model, d_model),
            "attn.bo": np.zeros(d_model),
            "ln1.g": np.ones(d_model),
            "ln1.b": np.zeros(d_model),
            "ff.W1": dense(d_model, ff_dim),
            "ff.b1": np.zeros(ff_dim),
            "ff.W2": dense(ff_dim, d_model),
            "ff.b2": np.zeros(d_model),
            "ln2.g": np.ones(d_model),
            "ln2.b": np.zeros(d_model),
            "wh.W": dense(d_model, 1),
            "wh.b": np.zeros(1),
            "val.W1": dense(robot_dim + d_model, vh),
            "val.b1": np.zeros(vh),
            "val.W2": dense(vh, vh),
            "val.b2": np.zeros(vh),
            "val.W3": dense(vh, 1),
            "val.b3": np.zeros(1),
        }
        self._momentum = None

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        other = ValueNet.__new__(ValueNet)
        for attr in ("input_dim", "robot_dim", "embed_hidden", "d_model",
                     "n_heads", "ff_dim", "value_hidden"):
            setattr(other, attr, getattr(self, attr))
        other.params = {k: v.copy() for k, v in self.params.items()}
        other._momentum = None
        return other


def _softmax_last(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    sigma = np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + _LN_EPS)
    z = xc / sigma
    return z * g + b, z, sigma


def _split_heads(x, n_heads):
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _forward_batch(net, X, R, need_cache):
    """Values (and optionally the full activation cache) for a batch.

    X: (B, N, input_dim) per-human rows, R: (B, robot_dim).  All samples in a
    batch share N; N == 0 uses a zero crowd feature.
    """
    p = net.params
    B, N = X.shape[0], X.shape[1]
    cache = {"X": X, "R": R}

    if N > 0:
        H1p = X @ p["embed.W1"] + p["embed.b1"]
        H1 = np.maximum(H1p, 0.0)
        Ep = H1 @ p["embed.W2"] + p["embed.b2"]
        E = np.maximum(Ep, 0.0)

        Q = _split_heads(E @ p["attn.Wq"] + p["attn.bq"], net.n_heads)
        Kh = _split_heads(E @ p["attn.Wk"] + p["attn.bk"], net.n_heads)
        Vh = _split_heads(E @ p["attn.Wv"] + p["attn.bv"], net.n_heads)
        scale = 1.0 / np.sqrt(net.d_model / net.n_heads)
        S = np.einsum("bhnd,bhmd->bhnm", Q, Kh) * scale
        A = _softmax_last(S)
        heads = np.einsum("bhnm,bhmd->bhnd", A, Vh)
        Ocat = _merge_heads(heads)
        O = Ocat @ p["attn.Wo"] + p["attn.bo"]

        P1 = E + O
        Z1, z1n, sig1 = _layernorm(P1, p["ln1.g"], p["ln1.b"])
        F1p = Z1 @ p["ff.W1"] + p["ff.b1"]
        F1 = np.maximum(F1p, 0.0)
        F = F1 @ p["ff.W2"] + p["ff.b2"]
        P2 = Z1 + F
        Z2, z2n, sig2 = _layernorm(P2, p["ln2.g"], p["ln2.b"])

        logits = (Z2 @ p["wh.W"] + p["wh.b"])[..., 0]
        alpha = _softmax_last(logits)
        crowd = np.einsum("bn,bnd->bd", alpha, E)
        if need_cache:
            cache.update(H1p=H1p, H1=H1, Ep=Ep, E=E, Q=Q, K=Kh, V=Vh, A=A,
                         Ocat=Ocat, z1n=z1n, sig1=sig1, Z1=Z1, F1p=F1p, F1=F1,
                         z2n=z2n, sig2=sig2, Z2=Z2, alpha=alpha, scale=scale)
    else:
        alpha = np.zeros((B, 0))
        crowd = np.zeros((B, net.d_model))

    U = np.concatenate([R, crowd], axis=1)
    G1p = U @ p["val.W1"] + p["val.b1"]
    G1 = np.maximum(G1p, 0.0)
    G2p = G1 @ p["val.W2"] + p["val.b2"]
    G2 = np.maximum(G2p, 0.0)
    values = (G2 @ p["val.W3"] + p["val.b3"])[:, 0]
    if need_cache:
        cache.update(U=U, G1p=G1p, G1=G1, G2p=G2p, G2=G2, alpha_out=alpha)
    return values, alpha, cache


def _backward_batch(net, cache, upstream):
    """Gradients of sum_b upstream[b] * value[b] w.r.t. every parameter."""
    p = net.params
    g = {k: None for k in p}
    X, R = cache["X"], cache["R"]
    B, N = X.shape[0], X.shape[1]
    s = np.asarray(upstream, dtype=np.float64)

    G2, G1, U = cache["G2"], cache["G1"], cache["U"]
    dv = s[:, None]
    g["val.W3"] = G2.T @ dv
    g["val.b3"] = dv.sum(axis=0)
    dG2 = (dv @ p["val.W3"].T) * (cache["G2p"] > 0.0)
    g["val.W2"] = G1.T @ dG2
    g["val.b2"] = dG2.sum(axis=0)
    dG1 = (dG2 @ p["val.W2"].T) * (cache["G1p"] > 0.0)
    g["val.W1"] = U.T @ dG1
    g["val.b1"] = dG1.sum(axis=0)
    dU = dG1 @ p["val.W1"].T
    dcrowd = dU[:, net.robot_dim:]

    if N == 0:
        for k in g:
            if g[k] is None:
                g[k] = np.zeros_like(p[k])
        return g

    E, alpha = cache["E"], cache["alpha"]
    dalpha = np.einsum("bd,bnd->bn", dcrowd, E)
    dE = alpha[:, :, None] * dcrowd[:, None, :]

    # softmax over humans
    dlogits = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    Z2 = cache["Z2"]
    g["wh.W"] = np.einsum("bnd,bn->d", Z2, dlogits)[:, None]
    g["wh.b"] = np.array([dlogits.sum()])
    dZ2 = dlogits[:, :, None] * p["wh.W"][:, 0][None, None, :]

    # layer norm 2
    z2n, sig2 = cache["z2n"], cache["sig2"]
    g["ln2.g"] = (dZ2 * z2n).sum(axis=(0, 1))
    g["ln2.b"] = dZ2.sum(axis=(0, 1))
    dzn = dZ2 * p["ln2.g"]
    dP2 = (dzn - dzn.mean(axis=-1, keepdims=True)
           - z2n * (dzn * z2n).mean(axis=-1, keepdims=True)) / sig2

    dZ1 = dP2.copy()
    dF = dP2
    F1, Z1 = cache["F1"], cache["Z1"]
    BN = B * N
    g["ff.W2"] = F1.reshape(BN, -1).T @ dF.reshape(BN, -1)
    g["ff.b2"] = dF.sum(axis=(0, 1))
    dF1 = (dF @ p["ff.W2"].T) * (cache["F1p"] > 0.0)
    g["ff.W1"] = Z1.reshape(BN, -1).T @ dF1.reshape(BN, -1)
    g["ff.b1"] = dF1.sum(axis=(0, 1))
    dZ1 += dF1 @ p["ff.W1"].T

    # layer norm 1
    z1n, sig1 = cache["z1n"], cache["sig1"]
    g["ln1.g"] = (dZ1 * z1n).sum(axis=(0, 1))
    g["ln1.b"] = dZ1.sum(axis=(0, 1))
    dzn = dZ1 * p["ln1.g"]
    dP1 = (dzn - dzn.mean(axis=-1, keepdims=True)
           - z1n * (dzn * z1n).mean(axis=-1, keepdims=True)) / sig1

    dE += dP1
    dO = dP1
    Ocat = cache["Ocat"]
    g["attn.Wo"] = Ocat.reshape(BN, -1).T @ dO.reshape(BN, -1)
    g["attn.bo"] = dO.sum(axis=(0, 1))
    dOcat = dO @ p["attn.Wo"].T
    dheads = _split_heads(dOcat, net.n_heads)

    A, Vh, Q, Kh, scale = cache["A"], cache["V"], cache["Q"], cache["K"], cache["scale"]
    dA = np.einsum("bhnd,bhmd->bhnm", dheads, Vh)
    dV = np.einsum("bhnm,bhnd->bhmd", A, dheads)
    dS = A * (dA - (A * dA).sum(axis=-1, keepdims=True))
    dQ = np.einsum("bhnm,bhmd->bhnd", dS, Kh) * scale
    dK = np.einsum("bhnm,bhnd->bhmd", dS, Q) * scale

    dQf = _merge_heads(dQ)
    dKf = _merge_heads(dK)
    dVf = _merge_heads(dV)
    Ef = E.reshape(BN, -1)
    g["attn.Wq"] = Ef.T @ dQf.reshape(BN, -1)
    g["attn.bq"] = dQf.sum(axis=(0, 1))
    g["attn.Wk"] = Ef.T @ dKf.reshape(BN, -1)
    g["attn.bk"] = dKf.sum(axis=(0, 1))
    g["attn.Wv"] = Ef.T @ dVf.reshape(BN, -1)
    g["attn.bv"] = dVf.sum(axis=(0, 1))
    dE += dQf @ p["attn.Wq"].T + dKf @ p["attn.Wk"].T + dVf @ p["attn.Wv"].T

    dEp = dE * (cache["Ep"] > 0.0)
    H1 = cache["H1"]
    g["embed.W2"] = H1.reshape(BN, -1).T @ dEp.reshape(BN, -1)
    g["embed.b2"] = dEp.sum(axis=(0, 1))
    dH1 = (dEp @ p["embed.W2"].T) * (cache["H1p"] > 0.0)
    g["embed.W1"] = X.reshape(BN, -1).T @ dH1.reshape(BN, -1)
    g["embed.b1"] = dH1.sum(axis=(0, 1))
    return g


def _state_arrays(state):
    rows = state.rows()
    return rows[None, :, :], state.robot_vec()[None, :]


def forward(net, state):
    """Value and per-human attention weights for one joint state."""
    X, R = _state_arrays(state)
    if not (np.isfinite(X).all() and np.isfinite(R).all()):
        raise ValueError("non-finite state input")
    values, alpha, _ = _forward_batch(net, X, R, need_cache=False)
    return float(values[0]), [float(a) for a in alpha[0]]


def forward_batch(net, X, R):
    """Values and attentions for a batch of equal-crowd-size states."""
    values, alpha, _ = _forward_batch(net, X, R, need_cache=False)
    return values, alpha


def backward(net, state, upstream):
    """Exact gradients of upstream * value(state) for every parameter."""
    X, R = _state_arrays(state)
    _, _, cache = _forward_batch(net, X, R, need_cache=True)
    return _backward_batch(net, cache, np.array([float(upstream)]))


def value_and_grads_batch(net, X, R, upstream):
    """One combined pass: values plus gradients of sum(upstream * value)."""
    values, _, cache = _forward_batch(net, X, R, need_cache=True)
    return values, _backward_batch(net, cache, upstream)


def forward_batch_cached(net, X, R):
    """Batched values plus the activation cache for a later backward call
    (for losses whose upstream depends on the values themselves)."""
    values, _, cache = _forward_batch(net, X, R, need_cache=True)
    return values, cache


def backward_batch_cached(net, cache, upstream):
    return _backward_batch(net, cache, upstream)


def sgd_step(net, grads, lr, momentum=0.9):
    """Classical-momentum descent, in place.

    Raises TrainingFaultError (before touching any parameter) when a gradient
    is non-finite; callers skip the batch and count the fault.
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    for k, gr in grads.items():
        if not np.isfinite(gr).all():
            raise TrainingFaultError(f"non-finite gradient in {k}")
    if net._momentum is None:
        net._momentum = {k: np.zeros_like(v) for k, v in net.params.items()}
    for k, v in net.params.items():
        buf = net._momentum[k]
        buf *= momentum
        buf -= lr * grads[k]
        v += buf
    return net


def save_weights(net, path):
    """Little-endian binary: magic, version, head count, dimension table,
    then the raw parameter arrays in declaration order."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, net.n_heads, len(net.params)))
        for arr in net.params.values():
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in net.params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path):
    """Inverse of save_weights; any structural mismatch is a FormatError."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated weights file {path}")
        out = blob[off:off + n]
        off += n
        return out

    if take(4) != _MAGIC:
        raise FormatError(f"{path} is not a weights file (bad magic)")
    version, n_heads, n_tensors = struct.unpack("<III", take(12))
    if version != _VERSION:
        raise FormatError(f"unsupported weights version {version}")
    shapes = []
    for _ in range(n_tensors):
        (ndim,) = struct.unpack("<I", take(4))
        shapes.append(struct.unpack(f"<{ndim}I", take(4 * ndim)))

    ref = ValueNet(seed=0)
    expect = [(k, v.shape) for k, v in ref.params.items()]
    if n_heads != ref.n_heads or len(shapes) != len(expect):
        raise FormatError(
            f"dimension table mismatch: {n_tensors} tensors / {n_heads} heads, "
            f"expected {len(expect)} / {ref.n_heads}")
    for (name, want), got in zip(expect, shapes):
        if tuple(want) != tuple(got):
            raise FormatError(f"dimension table mismatch for {name}: "
                              f"file has {got}, expected {tuple(want)}")
    for name, want in expect:
        raw = take(8 * int(np.prod(want)))
        ref.params[name] = np.frombuffer(raw, dtype="<f8").reshape(want).copy()
    if off != len(blob):
        raise FormatError(f"trailing bytes in weights file {path}")
    ref._momentum = None
    return ref
