from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer


class TapeError(RuntimeError):
    """Backward was asked to replay a tape that is absent, eval-mode, or stale."""


@dataclass
class NetworkParams:
    """Trainable weights and running buffers of a layer sequence.

    Keys are ``"<layer index>.<name>"``. ``version`` is bumped by every
    optimizer step so tapes recorded before an update are detectably stale.
    """

    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    version: int = 0

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.version,
        )

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.version,
        )

    def count(self) -> int:
        return int(sum(v.size for v in self.weights.values()))


@dataclass
class Tape:
    layers: list[Layer]
    params: NetworkParams
    caches: list = field(default_factory=list)
    version: int = 0
    train: bool = True
    consumed: bool = False


def _sub(d: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in d.items() if k.startswith(prefix)}


def init_params(layers: list[Layer], rng: np.random.Generator, dtype=np.float32) -> NetworkParams:
    weights, buffers = {}, {}
    for i, layer in enumerate(layers):
        w, b = layer.init(rng, dtype)
        weights.update({f"{i}.{k}": v for k, v in w.items()})
        buffers.update({f"{i}.{k}": v for k, v in b.items()})
    return NetworkParams(weights, buffers)


def param_count(layers: list[Layer]) -> int:
    return sum(int(np.prod(s)) for layer in layers for s in layer.param_shapes().values())


def check_channels(layers: list[Layer], in_channels: int) -> int:
    c = in_channels
    for i, layer in enumerate(layers):
        try:
            c = layer.channels_out(c)
        except ValueError as exc:
            raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
    return c


def forward(params: NetworkParams, layers: list[Layer], x: np.ndarray, mode: str = "train"):
    """Run ``layers`` on ``x``; returns ``(output, tape)``.

    Train mode normalizes with batch statistics and updates the running
    statistics in ``params.buffers``; eval mode uses the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4:
        raise ValueError(f"expected a (batch, channels, height, width) tensor, got shape {x.shape}")
    check_channels(layers, x.shape[1])
    train = mode == "train"
    tape = Tape(layers, params, version=params.version, train=train)
    for i, layer in enumerate(layers):
        prefix = f"{i}."
        x, cache = layer.forward(_sub(params.weights, prefix), _sub(params.buffers, prefix), x, train)
        if train:
            tape.caches.append(cache)
    return x, tape


def backward(tape: Tape | None, loss_grad: np.ndarray):
    """Replay ``tape`` in reverse; returns ``(param_grads, input_grad)``."""
    if tape is None:
        raise TapeError("no tape recorded; run forward in train mode first")
    if not tape.train:
        raise TapeError("tape was recorded in eval mode and holds no activations")
    if tape.consumed:
        raise TapeError("tape has already been replayed")
    if tape.version != tape.params.version:
        raise TapeError(
            f"tape is stale: recorded at parameter version {tape.version}, "
            f"parameters are now at version {tape.params.version}"
        )
    grads: dict[str, np.ndarray] = {}
    dy = loss_grad
    for i in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[i]
        prefix = f"{i}."
        dy, g = layer.backward(_sub(tape.params.weights, prefix), tape.caches[i], dy)
        grads.update({prefix + k: v for k, v in g.items()})
    tape.consumed = True
    tape.caches = []
    return grads, dy


class Network:
    """Convenience pairing of a layer list with its parameters."""

    def __init__(self, layers: list[Layer], params: NetworkParams | None = None, *, seed=None, dtype=np.float32):
        self.layers = list(layers)
        if params is None:
            params = init_params(self.layers, np.random.default_rng(seed), dtype)
        self.params = params

    def __call__(self, x, mode="eval"):
        return forward(self.params, self.layers, x, mode)[0]

    def forward(self, x, mode="train"):
        return forward(self.params, self.layers, x, mode)

    def copy(self) -> "Network":
        return Network(copy.deepcopy(self.layers), self.params.copy())
