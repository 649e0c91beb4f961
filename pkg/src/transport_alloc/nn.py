"""Small fully connected networks with hand-written reverse mode.

Hidden layers use ReLU. The output layer is either logistic (actor) or
linear (critic). Inputs are batched row-wise: ``x`` has shape (B, n_in).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

OUTPUTS = ("sigmoid", "linear", "tanh")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpParams:
    weights: list
    biases: list
    output: str = "sigmoid"

    def __post_init__(self):
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output activation {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not chain")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k} input {w.shape[0]} != previous output "
                                 f"{self.weights[k - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` sharing memory with the net."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(sizes, rng: np.random.Generator, output: str = "sigmoid",
             last_scale: float = 1e-2) -> MlpParams:
    """He-initialized hidden layers; the last layer starts near zero."""
    ws, bs = [], []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        scale = last_scale if last else np.sqrt(2.0 / a)
        ws.append(rng.normal(0.0, scale, size=(a, b)))
        bs.append(np.zeros(b))
    return MlpParams(ws, bs, output)


def forward(params: MlpParams, x, *, return_cache: bool = False, pre_output: bool = False):
    """Evaluate the network.

    With ``pre_output`` the output activation is skipped (logits). With
    ``return_cache`` the layer inputs needed by ``backward`` are returned too.
    """
    h = np.asarray(x, dtype=float)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.shape[1] != params.n_in:
        raise ValueError(f"input width {h.shape[1]} != network input {params.n_in}")
    cache = [h]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if k < last:
            h = np.maximum(z, 0.0)
        elif pre_output or params.output == "linear":
            h = z
        elif params.output == "sigmoid":
            h = sigmoid(z)
        else:
            h = np.tanh(z)
        cache.append(h)
    out = h[0] if single else h
    return (out, cache) if return_cache else out


def backward(params: MlpParams, cache, grad_out, *, pre_output: bool = False):
    """Reverse pass for a cached forward.

    ``grad_out`` is dL/d(output) with the output's shape. Returns
    ``(grads, grad_in)`` where ``grads`` matches ``params.arrays()``.
    """
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    out = cache[-1]
    if g.shape != out.shape:
        raise ValueError(f"upstream gradient {g.shape} != output {out.shape}")
    if not pre_output:
        if params.output == "sigmoid":
            g = g * out * (1.0 - out)
        elif params.output == "tanh":
            g = g * (1.0 - out ** 2)
    grads = [None] * (2 * len(params.weights))
    for k in range(len(params.weights) - 1, -1, -1):
        h_in = cache[k]
        grads[2 * k] = h_in.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * (cache[k] > 0)
    return grads, g


def save_checkpoint(path, actors: list[MlpParams], meta: dict | None = None) -> None:
    """Write actors as JSON: layer sizes header plus row-major weights."""
    doc = {
        "format": "transport_alloc.mlp/1",
        "meta": meta or {},
        "networks": [
            {
                "sizes": p.sizes,
                "output": p.output,
                "layers": [{"W": w.ravel().tolist(), "b": b.tolist()}
                           for w, b in zip(p.weights, p.biases)],
            }
            for p in actors
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path) -> list[MlpParams]:
    doc = json.loads(Path(path).read_text())
    nets = []
    for net in doc["networks"]:
        sizes = net["sizes"]
        ws, bs = [], []
        for (a, b), layer in zip(zip(sizes[:-1], sizes[1:]), net["layers"]):
            ws.append(np.asarray(layer["W"], dtype=float).reshape(a, b))
            bs.append(np.asarray(layer["b"], dtype=float))
        nets.append(MlpParams(ws, bs, net["output"]))
    return nets
