"""Small ReLU multilayer perceptrons with hand-written backprop.

Parameters live in one contiguous float64 vector; per-layer weights and biases
are views into it, so optimisers and soft updates act on a single array.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OUTPUTS = ("linear", "tanh")


@dataclass(frozen=True)
class Architecture:
    sizes: tuple[int, ...]
    output: str = "linear"

    def __post_init__(self):
        if len(self.sizes) < 2 or any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")
        if self.output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def describe(self) -> str:
        return f"mlp relu sizes={'x'.join(map(str, self.sizes))} output={self.output}"


class Approximator:
    """MLP ``sizes[0] -> ... -> sizes[-1]`` with ReLU hidden layers.

    ``forward`` accepts a single input vector or a batch ``(B, in)``.
    ``backward`` returns parameter gradients summed over the batch, so a
    mean loss should scale its output gradient by ``1 / B``.
    """

    def __init__(self, arch: Architecture, params: np.ndarray | None = None):
        self.arch = arch
        self.params = np.zeros(arch.n_params) if params is None else np.array(params, dtype=float)
        if self.params.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {self.params.shape}")
        self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        off = 0
        for i, o in zip(self.arch.sizes[:-1], self.arch.sizes[1:]):
            self.weights.append(self.params[off:off + i * o].reshape(i, o))
            off += i * o
            self.biases.append(self.params[off:off + o])
            off += o

    @classmethod
    def create(cls, sizes, rng: np.random.Generator, output: str = "linear", final_scale: float = 1.0) -> "Approximator":
        """He-uniform hidden layers, zero biases; the last layer is scaled by ``final_scale``."""
        arch = Architecture(tuple(sizes), output)
        net = cls(arch)
        n = len(net.weights)
        for k, W in enumerate(net.weights):
            bound = np.sqrt(6.0 / W.shape[0]) if k < n - 1 else np.sqrt(3.0 / W.shape[0]) * final_scale
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return net

    @property
    def in_dim(self) -> int:
        return self.arch.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.arch.sizes[-1]

    @property
    def final_layer_slice(self) -> slice:
        i, o = self.arch.sizes[-2], self.arch.sizes[-1]
        return slice(self.arch.n_params - (i + 1) * o, self.arch.n_params)

    def copy(self) -> "Approximator":
        return Approximator(self.arch, self.params.copy())

    def set_params(self, values: np.ndarray) -> None:
        self.params[...] = values

    # -- evaluation ---------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                np.maximum(h, 0.0, out=h)
        return np.tanh(h) if self.arch.output == "tanh" else h

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping the activations needed by :meth:`backward`."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [h]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = np.tanh(h) if self.arch.output == "tanh" else h
        return out, (acts, out)

    def backward(self, cache, grad_out: np.ndarray, need_input: bool = False):
        """Gradients of ``sum(grad_out * output)``: (parameter vector, input or None)."""
        acts, out = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        if self.arch.output == "tanh":
            g = g * (1.0 - out * out)
        grad = np.empty_like(self.params)
        off = self.arch.n_params
        for k in range(len(self.weights) - 1, -1, -1):
            W = self.weights[k]
            i, o = W.shape
            off -= o
            grad[off:off + o] = g.sum(axis=0)
            off -= i * o
            grad[off:off + i * o] = (acts[k].T @ g).ravel()
            if k > 0 or need_input:
                g = g @ W.T
                if k > 0:
                    g = g * (acts[k] > 0.0)
        return grad, (g if need_input else None)

    def value_and_grad(self, x: np.ndarray):
        """Scalar network: (f(x), df/dparams, df/dx) for one input vector."""
        if self.out_dim != 1:
            raise ValueError("value_and_grad needs a scalar output")
        y, cache = self.forward_cache(x)
        gp, gx = self.backward(cache, np.ones((1, 1)), need_input=True)
        return float(y[0, 0]), gp, gx[0]

    def gradient(self, x: np.ndarray):
        """(df/dparams, df/dx) for a scalar network at one input."""
        _, gp, gx = self.value_and_grad(x)
        return gp, gx


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class Adam:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place descent step on ``params``."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# finite differences


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def central_difference(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        hi = f(x)
        x.flat[i] = orig - step
        lo = f(x)
        x.flat[i] = orig
        g.flat[i] = (hi - lo) / (2.0 * step)
    return g


@dataclass
class FdReport:
    points: int
    max_param_error: float
    max_input_error: float

    @property
    def worst(self) -> float:
        return max(self.max_param_error, self.max_input_error)

    def passed(self, tol: float = 1e-5) -> bool:
        return self.worst < tol


def param_central_difference(net: Approximator, x: np.ndarray, readout: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of ``readout @ net(x)`` with respect to every parameter.

    Perturbing one entry of layer k only changes that layer's pre-activation,
    so all perturbations of a layer are pushed through the remaining layers as
    one batch. Each row is still a genuine forward pass with a perturbed
    parameter vector.
    """
    x = np.asarray(x, dtype=float)
    last = len(net.weights) - 1
    acts = [x]
    h = x
    pres = []
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        pres.append(z)
        h = np.maximum(z, 0.0) if k < last else z

    def tail(z, k):
        # z: (R, o_k) pre-activations of layer k
        for j in range(k, last + 1):
            if j > k:
                z = z @ net.weights[j] + net.biases[j]
            if j < last:
                z = np.maximum(z, 0.0)
        out = np.tanh(z) if net.arch.output == "tanh" else z
        return out @ readout

    grad = np.empty_like(net.params)
    off = 0
    for k, W in enumerate(net.weights):
        i, o = W.shape
        inp = acts[k]
        # weight (r, c) shifts unit c by step * inp[r]; bias c shifts unit c by step
        shifts = np.concatenate([np.repeat(inp, o), np.ones(o)]) * step
        units = np.concatenate([np.tile(np.arange(o), i), np.arange(o)])
        base = np.broadcast_to(pres[k], (len(units), o)).copy()
        rows = np.arange(len(units))
        hi = base.copy()
        hi[rows, units] += shifts
        lo = base
        lo[rows, units] -= shifts
        grad[off:off + i * o + o] = (tail(hi, k) - tail(lo, k)) / (2.0 * step)
        off += i * o + o
        if k < last:
            acts.append(np.maximum(pres[k], 0.0))
    return grad


def check_gradients(net: Approximator, rng: np.random.Generator, points: int = 100, step: float = 1e-6,
                    input_scale: float = 1.0) -> FdReport:
    """Compare analytic and central-difference gradients at random inputs.

    Scalar networks are checked directly; vector-output networks are checked
    through a random linear read-out. Inputs close to a ReLU kink (any
    pre-activation within ``10 * step`` of zero) are redrawn, since the
    difference quotient straddles the kink there.
    """
    pe = ie = 0.0
    done = 0
    while done < points:
        x = rng.uniform(-input_scale, input_scale, size=net.in_dim)
        w = rng.normal(size=net.out_dim)
        if _near_kink(net, x, 10 * step * (1.0 + np.abs(x).sum())):
            continue
        _, cache = net.forward_cache(x)
        gp, gx = net.backward(cache, w[None, :], need_input=True)
        fd_p = param_central_difference(net, x, w, step)
        fd_x = central_difference(lambda z: float(net.forward(z) @ w), x, step)
        pe = max(pe, relative_error(gp, fd_p, floor=1e-4))
        ie = max(ie, relative_error(gx[0], fd_x, floor=1e-4))
        done += 1
    return FdReport(points, pe, ie)


def _near_kink(net: Approximator, x: np.ndarray, margin: float) -> bool:
    h = np.atleast_2d(x)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = h @ W + b
        if np.any(np.abs(h) < margin):
            return True
        h = np.maximum(h, 0.0)
    return False


# ---------------------------------------------------------------------------
# serialisation


MAGIC = "drmdp-params v1"


def save_params(path, nets: dict[str, Approximator], meta: dict | None = None) -> None:
    """Text header line (JSON) followed by the raw little-endian float64 parameters."""
    blobs, entries = [], []
    for name, net in nets.items():
        raw = net.params.astype("<f8").tobytes()
        entries.append({
            "name": name,
            "sizes": list(net.arch.sizes),
            "output": net.arch.output,
            "count": int(net.arch.n_params),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        blobs.append(raw)
    header = json.dumps({"magic": MAGIC, "nets": entries, "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_params(path) -> tuple[dict[str, Approximator], dict]:
    data = Path(path).read_bytes()
    line, _, body = data.partition(b"\n")
    header = json.loads(line)
    if header.get("magic") != MAGIC:
        raise ValueError(f"{path}: not a parameter snapshot")
    nets, off = {}, 0
    for e in header["nets"]:
        n = 8 * e["count"]
        raw = body[off:off + n]
        off += n
        if len(raw) != n or hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise ValueError(f"{path}: checksum mismatch for {e['name']}")
        arch = Architecture(tuple(e["sizes"]), e["output"])
        nets[e["name"]] = Approximator(arch, np.frombuffer(raw, dtype="<f8").astype(float))
    if off != len(body):
        raise ValueError(f"{path}: trailing bytes")
    return nets, header["meta"]


__all__ = [
    "Adam",
    "Approximator",
    "Architecture",
    "FdReport",
    "central_difference",
    "check_gradients",
    "load_params",
    "param_central_difference",
    "relative_error",
    "save_params",
]
