"""Dense networks with hand-written backprop, Adam, and Polyak averaging.

Everything is float64. Inputs may be a single vector of shape ``(in,)`` or a
batch of row vectors of shape ``(n, in)``; outputs follow the same convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "tanh-scaled")


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a gradient, loss or parameter update is NaN/Inf."""


@dataclass
class Mlp:
    sizes: list[int]
    weights: list[np.ndarray]  # layer k: (sizes[k+1], sizes[k])
    biases: list[np.ndarray]
    hidden: str = "relu"
    output: str = "identity"
    output_scale: float = 1.0

    def __post_init__(self):
        if len(self.sizes) < 2 or any(int(s) <= 0 for s in self.sizes):
            raise ShapeError(f"layer widths must be positive, got {self.sizes}")
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden!r}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.sizes[k + 1], self.sizes[k])
            if w.shape != expected or b.shape != (self.sizes[k + 1],):
                raise ShapeError(
                    f"layer {k}: weight {w.shape} / bias {b.shape}, expected {expected} / ({expected[0]},)"
                )

    @property
    def in_width(self) -> int:
        return self.sizes[0]

    @property
    def out_width(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> Mlp:
        return Mlp(
            list(self.sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden,
            self.output,
            self.output_scale,
        )

    def num_params(self) -> int:
        return sum(p.size for p in self.params())


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor: float) -> GradientBundle:
        return GradientBundle(
            [w * factor for w in self.weights],
            [b * factor for b in self.biases],
            None if self.input is None else self.input * factor,
        )


def init_mlp(
    sizes,
    rng: np.random.Generator,
    hidden: str = "relu",
    output: str = "identity",
    output_scale: float = 1.0,
    final_scale: float = 1.0,
) -> Mlp:
    """Uniform fan-in init; ``final_scale`` shrinks the last layer (1e-3 for actors)."""
    sizes = [int(s) for s in sizes]
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        bound = 1.0 / math.sqrt(sizes[k])
        w = rng.uniform(-bound, bound, size=(sizes[k + 1], sizes[k]))
        b = rng.uniform(-bound, bound, size=sizes[k + 1])
        if k == len(sizes) - 2:
            w *= final_scale
            b *= final_scale
        weights.append(w)
        biases.append(b)
    return Mlp(sizes, weights, biases, hidden, output, float(output_scale))


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_width:
        raise ShapeError(f"input shape {x.shape if not single else x.shape[1:]} does not match in-width {net.in_width}")
    return x, single


def _hidden(net: Mlp, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if net.hidden == "relu" else np.tanh(z)


def _output(net: Mlp, z: np.ndarray) -> np.ndarray:
    if net.output == "identity":
        return z
    if net.output == "tanh":
        return np.tanh(z)
    return net.output_scale * np.tanh(z)


def _trace(net: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    # acts[k] is the input to layer k; pre[k] its pre-activation
    acts, pre = [x], []
    last = len(net.weights) - 1
    h = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = _output(net, z) if k == last else _hidden(net, z)
        acts.append(h)
    return acts, pre


def forward(net: Mlp, x) -> np.ndarray:
    xb, single = _as_batch(net, x)
    y = _trace(net, xb)[0][-1]
    return y[0] if single else y


def forward_traced(net: Mlp, x) -> tuple[np.ndarray, tuple]:
    """Batch forward pass that also returns the intermediates ``backward`` can reuse."""
    xb, _ = _as_batch(net, x)
    trace = _trace(net, xb)
    return trace[0][-1], trace


def backward(net: Mlp, x, output_grad, trace: tuple | None = None) -> GradientBundle:
    """Gradient of ``sum(forward(x) * output_grad)`` w.r.t. every parameter and the input.

    For a batch the parameter gradients are summed over rows; ``input`` keeps
    one row per sample. ``trace`` (from ``forward_traced`` on the same input
    and parameters) skips the recomputation of the forward pass.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (xb.shape[0], net.out_width):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match output ({xb.shape[0]}, {net.out_width})")

    acts, pre = trace if trace is not None else _trace(net, xb)
    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]

    if net.output == "identity":
        delta = g
    else:
        t = np.tanh(pre[-1])
        scale = net.output_scale if net.output == "tanh-scaled" else 1.0
        delta = g * scale * (1.0 - t * t)

    for k in range(n_layers - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        upstream = delta @ net.weights[k]
        if k > 0:
            if net.hidden == "relu":
                delta = upstream * (pre[k - 1] > 0.0)
            else:
                delta = upstream * (1.0 - acts[k] ** 2)
        else:
            delta = upstream

    return GradientBundle(gw, gb, delta[0] if single else delta)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3, **kw) -> AdamState:
        return cls(
            [np.zeros_like(p) for p in net.params()],
            [np.zeros_like(p) for p in net.params()],
            lr=lr,
            **kw,
        )


def adam_step(net: Mlp, grads: GradientBundle, state: AdamState) -> None:
    """One bias-corrected Adam descent step, applied to ``net`` in place."""
    params = net.params()
    garr = grads.arrays()
    if len(garr) != len(params) or any(g.shape != p.shape for g, p in zip(garr, params)):
        raise ShapeError("gradient bundle does not mirror network shapes")
    for i, g in enumerate(garr):
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"adam_step rejected: parameter array {i} has {bad} non-finite gradient entries")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    step_size = state.lr / c1
    for p, g, m, v in zip(params, garr, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v / c2) + state.eps)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """Polyak averaging ``target <- tau * online + (1 - tau) * target`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.sizes != online.sizes:
        raise ShapeError(f"target sizes {target.sizes} != online sizes {online.sizes}")
    for t, o in zip(target.params(), online.params()):
        if tau == 1.0:
            t[...] = o
        elif tau != 0.0:
            t *= 1.0 - tau
            t += tau * o


# ---------------------------------------------------------------------------
# snapshots
#
# Layout: one ASCII header line
#   AN2N-MLP 1 sizes=3,64,64,1 hidden=relu output=tanh-scaled scale=<float.hex>\n
# followed by little-endian float64 data: W0 (row-major), b0, W1, b1, ...

_MAGIC = "AN2N-MLP"


def save_mlp(net: Mlp, path) -> None:
    header = (
        f"{_MAGIC} 1 sizes={','.join(str(s) for s in net.sizes)} "
        f"hidden={net.hidden} output={net.output} scale={float(net.output_scale).hex()}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("ascii").split()
    if len(fields) < 2 or fields[0] != _MAGIC or fields[1] != "1":
        raise ValueError(f"{path}: not an MLP snapshot")
    kv = dict(f.split("=", 1) for f in fields[2:])
    sizes = [int(s) for s in kv["sizes"].split(",")]
    data = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    expected = sum(sizes[k + 1] * sizes[k] + sizes[k + 1] for k in range(len(sizes) - 1))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {data.size}")
    weights, biases, off = [], [], 0
    for k in range(len(sizes) - 1):
        n_w = sizes[k + 1] * sizes[k]
        weights.append(data[off : off + n_w].reshape(sizes[k + 1], sizes[k]).astype(np.float64))
        off += n_w
        biases.append(data[off : off + sizes[k + 1]].astype(np.float64))
        off += sizes[k + 1]
    return Mlp(sizes, weights, biases, kv["hidden"], kv["output"], float.fromhex(kv["scale"]))
