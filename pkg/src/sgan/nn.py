"""Generator / discriminator networks and the Adam optimizer.

Fully connected realization of the layer sequences

    G: [F V->H] -> [F H->H] -> [S] -> [CL] -> [U] -> [F H->H] -> [F H->V]
    D: [F 2V->H] -> [F H->H] -> [S] -> [L]

with H = 512 by default. S and U collapse to H->H fully connected layers
(flattening a length-H vector is the identity); CL is an (H + l)->H layer
applied to the concatenation of its input with the noise vector. Every F-type
layer uses LeakyReLU(0.001); L is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .fileformat import CHECKPOINT_MAGIC, read_container, write_container

NEGATIVE_SLOPE = 0.001
HIDDEN = 512
NOISE_DIM = 128
INIT_SCHEME = "uniform(+-1/sqrt(fan_in)), bias=0"


def _init_layer(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def _build(layers, seed):
    rng = np.random.default_rng(seed)
    params = {}
    for name, fan_in, fan_out in layers:
        W, b = _init_layer(rng, fan_in, fan_out)
        params[f"{name}.W"] = W
        params[f"{name}.b"] = b
    return params


@dataclass
class GeneratorNet:
    input_dim: int
    noise_dim: int
    hidden: int
    params: dict[str, np.ndarray] = field(repr=False)

    LAYERS = ("f1", "f2", "s", "cl", "u", "f3", "out")

    def tensors(self, graph: ad.Graph | None = None) -> dict[str, ad.Tensor]:
        if graph is None:
            return {k: ad.Tensor(v) for k, v in self.params.items()}
        return {k: graph.leaf(v) for k, v in self.params.items()}


@dataclass
class DiscriminatorNet:
    input_dim: int
    hidden: int
    params: dict[str, np.ndarray] = field(repr=False)

    LAYERS = ("f1", "f2", "s", "out")

    def tensors(self, graph: ad.Graph | None = None) -> dict[str, ad.Tensor]:
        if graph is None:
            return {k: ad.Tensor(v) for k, v in self.params.items()}
        return {k: graph.leaf(v) for k, v in self.params.items()}


def build_generator(V: int, l: int = NOISE_DIM, seed=0, hidden: int = HIDDEN) -> GeneratorNet:
    if V < 1:
        raise ValueError("V must be >= 1")
    H = hidden
    layers = [("f1", V, H), ("f2", H, H), ("s", H, H), ("cl", H + l, H),
              ("u", H, H), ("f3", H, H), ("out", H, V)]
    return GeneratorNet(V, l, H, _build(layers, seed))


def build_discriminator(V: int, seed=0, hidden: int = HIDDEN) -> DiscriminatorNet:
    if V < 1:
        raise ValueError("V must be >= 1")
    H = hidden
    layers = [("f1", 2 * V, H), ("f2", H, H), ("s", H, H), ("out", H, 1)]
    return DiscriminatorNet(V, H, _build(layers, seed))


def _dense(x, p, name, activate=True):
    y = ad.matmul(x, p[f"{name}.W"]) + p[f"{name}.b"]
    return ad.leaky_relu(y, NEGATIVE_SLOPE) if activate else y


def gen_forward(G: GeneratorNet, xbar, n, p: dict | None = None) -> ad.Tensor:
    """x_g = G(xbar, n) for a batch; ``p`` overrides the parameters with tensors."""
    xbar, n = ad.as_tensor(xbar), ad.as_tensor(n)
    if xbar.shape[-1] != G.input_dim or n.shape[-1] != G.noise_dim or xbar.shape[0] != n.shape[0]:
        raise ad.ShapeError(
            f"generator expects [B,{G.input_dim}] and [B,{G.noise_dim}], got {xbar.shape}, {n.shape}")
    p = p if p is not None else G.tensors()
    h = _dense(xbar, p, "f1")
    h = _dense(h, p, "f2")
    h = _dense(h, p, "s")
    h = _dense(ad.concat([h, n], axis=1), p, "cl")
    h = _dense(h, p, "u")
    h = _dense(h, p, "f3")
    return _dense(h, p, "out")


def disc_forward(D: DiscriminatorNet, xbar, xprime, p: dict | None = None) -> ad.Tensor:
    xbar, xprime = ad.as_tensor(xbar), ad.as_tensor(xprime)
    if xbar.shape != xprime.shape or xbar.shape[-1] != D.input_dim:
        raise ad.ShapeError(
            f"discriminator expects two [B,{D.input_dim}] inputs, got {xbar.shape}, {xprime.shape}")
    p = p if p is not None else D.tensors()
    h = _dense(ad.concat([xbar, xprime], axis=1), p, "f1")
    h = _dense(h, p, "f2")
    h = _dense(h, p, "s")
    return _dense(h, p, "out", activate=False)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict, repr=False)
    v: dict = field(default_factory=dict, repr=False)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update, in place on ``params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteError(f"non-finite gradient for parameter {k!r} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step = state.lr / bc1
    inv_sqrt_bc2 = 1.0 / np.sqrt(bc2)
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        p = params[k]
        if not p.flags.c_contiguous:
            p = params[k] = np.ascontiguousarray(p)
        kernels.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            state.m[k].reshape(-1), state.v[k].reshape(-1),
                            state.beta1, state.beta2, step, inv_sqrt_bc2, state.eps)
    return params


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, nets: dict, meta: dict) -> None:
    """Write networks (name -> net) plus metadata, e.g. the train config."""
    arrays, nets_meta = {}, {}
    for net_name, net in nets.items():
        if isinstance(net, GeneratorNet):
            nets_meta[net_name] = {"type": "generator", "input_dim": net.input_dim,
                                   "noise_dim": net.noise_dim, "hidden": net.hidden}
        else:
            nets_meta[net_name] = {"type": "discriminator", "input_dim": net.input_dim,
                                   "hidden": net.hidden}
        for k, v in net.params.items():
            arrays[f"{net_name}/{k}"] = v
    write_container(path, CHECKPOINT_MAGIC, {"nets": nets_meta, "meta": meta}, arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    nets = {}
    for net_name, info in header["nets"].items():
        params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.split("/", 1)[0] == net_name}
        if info["type"] == "generator":
            nets[net_name] = GeneratorNet(info["input_dim"], info["noise_dim"], info["hidden"], params)
        else:
            nets[net_name] = DiscriminatorNet(info["input_dim"], info["hidden"], params)
    return nets, header["meta"]
