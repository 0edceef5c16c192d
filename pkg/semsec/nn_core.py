"""
A minimal differentiable-network core built on numpy.

Networks are sequential stacks of a fixed set of layer kinds (dense, relu,
tanh, sigmoid, reshape and embedding). Every parametrized layer owns one
flat float64 vector holding its weights followed by its biases, and a
gradient vector of the same shape. All encoders, decoders and both DDPG
networks are built from this module.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import io
import pathlib
import struct
import logging

import numpy as np

from semsec.errors import ConfigError, NumericalError, ShapeError, StateError

logger = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "relu", "tanh", "sigmoid", "reshape", "embedding")
ACTIVATIONS = ("relu", "tanh", "sigmoid")

MAGIC = b"SEMSEC01"
BUFFER_TAG = b"BUFR"
_KIND_CODES = {kind: code for code, kind in enumerate(LAYER_KINDS)}


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a sequential stack.

    Parameters
    ----------
    kind: str
        One of ``LAYER_KINDS``.
    in_features, out_features: int
        Flattened input and output sizes per batch item. For an embedding
        layer ``in_features`` is the number of tokens and ``out_features``
        is ``n_tokens*dim``.
    shape: tuple
        Target shape (without the batch axis) of a reshape layer.
    vocab: int
        Vocabulary size of an embedding layer.
    """
    kind: str
    in_features: int
    out_features: int
    shape: Tuple[int, ...] = ()
    vocab: int = 0

    @classmethod
    def dense(cls, in_features: int, out_features: int) -> LayerSpec:
        return cls("dense", int(in_features), int(out_features))

    @classmethod
    def activation(cls, kind: str, size: int) -> LayerSpec:
        return cls(kind, int(size), int(size))

    @classmethod
    def reshape(cls, shape: Sequence[int]) -> LayerSpec:
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape))
        return cls("reshape", size, size, shape=shape)

    @classmethod
    def embedding(cls, vocab: int, n_tokens: int, dim: int) -> LayerSpec:
        return cls("embedding", int(n_tokens), int(n_tokens) * int(dim), vocab=int(vocab))

    @property
    def n_params(self) -> int:
        if self.kind == "dense":
            return self.in_features * self.out_features + self.out_features
        if self.kind == "embedding":
            return self.vocab * (self.out_features // self.in_features)
        return 0

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"{self.kind} is not a valid layer kind. Try one of {LAYER_KINDS}.")
        if self.in_features < 1 or self.out_features < 1:
            raise ConfigError(f"{self} must have positive input and output sizes.")
        if self.kind in ACTIVATIONS and self.in_features != self.out_features:
            raise ConfigError(f"Activation layer {self} must preserve its size.")
        if self.kind == "reshape":
            if (not self.shape) or int(np.prod(self.shape)) != self.in_features:
                raise ConfigError(f"Reshape layer {self} has a target shape that doesn't match its size.")
        if self.kind == "embedding":
            if self.vocab < 1 or self.out_features % self.in_features:
                raise ConfigError(f"Embedding layer {self} needs vocab >= 1 and out_features = n_tokens*dim.")


class Network:
    """
    A sequential stack of layers with a parameter store and a gradient store.

    Build one with ``init_network()``. ``forward()`` caches what the
    backward pass needs; ``backward()`` accumulates into ``grads`` until
    ``zero_grad()`` (or an optimizer step) clears them.

    Parameters
    ----------
    layers: list of LayerSpec
        The stack, first layer first.
    params: list of np.ndarray or None
        One flat float64 vector per layer (weights row-major, then biases), or
        None for parameterless layers.
    name: str
        A label used in checkpoints and log messages.

    Example
    -------
    | import numpy as np
    | from semsec.nn_core import LayerSpec, init_network
    |
    | net = init_network([LayerSpec.dense(2, 3), LayerSpec.activation('relu', 3),
    |                     LayerSpec.dense(3, 1)], seed=7)
    | y = net.forward(np.ones((4, 2)))
    | input_grad = net.backward(np.ones_like(y))
    """
    def __init__(self, layers: Sequence[LayerSpec], params: List[Optional[np.ndarray]], name: str = "") -> None:
        self.layers = list(layers)
        self.params = params
        self.grads = [None if p is None else np.zeros_like(p) for p in params]
        self.name = name
        self.opt_state: Dict = {}
        self._cache: Optional[List] = None
        self._in_shape: Optional[Tuple[int, ...]] = None
        self._out_shape: Optional[Tuple[int, ...]] = None
        return

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params if p is not None)

    def weights(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Views (W, b) into the flat parameter vector of dense layer i. W has
        shape (in_features, out_features). Writing into them updates the
        network.
        """
        spec = self.layers[i]
        if spec.kind != "dense":
            raise KeyError(f"Layer {i} is a {spec.kind} layer, not a dense layer.")
        p = self.params[i]
        n_w = spec.in_features * spec.out_features
        return p[:n_w].reshape(spec.in_features, spec.out_features), p[n_w:]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """
        Run the stack on a batch. The first axis of x is the batch axis.
        """
        x = np.asarray(x)
        first = self.layers[0]
        if x.ndim < 2 or int(np.prod(x.shape[1:])) != first.in_features:
            raise ShapeError(
                f"{self.name or 'Network'} expects {first.in_features} input features "
                f"per item, got an input of shape {x.shape}."
            )
        if first.kind != "embedding":
            x = x.astype(np.float64, copy=False)
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"Non-finite input passed to {self.name or 'Network'}.forward().")

        self._in_shape = x.shape
        cache = []
        for i, spec in enumerate(self.layers):
            x, c = self._layer_forward(i, spec, x)
            cache.append(c)
        self._cache = cache
        self._out_shape = x.shape
        return x

    def backward(self, output_grad: np.ndarray) -> np.ndarray:
        """
        Backpropagate dL/d(output) through the stack. Parameter gradients are
        added to ``grads``; the gradient with respect to the input is returned
        in the shape of that input.
        """
        if self._cache is None:
            raise StateError(f"backward() was called on {self.name or 'a network'} without a prior forward().")
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != self._out_shape:
            raise ShapeError(f"Output gradient has shape {g.shape}, expected {self._out_shape}.")
        for i in range(len(self.layers) - 1, -1, -1):
            g = self._layer_backward(i, self.layers[i], self._cache[i], g)
        return g.reshape(self._in_shape)

    def zero_grad(self) -> None:
        for g in self.grads:
            if g is not None:
                g[:] = 0.0
        return

    def copy_params_from(self, other: Network) -> None:
        _check_same_shapes(self, other)
        for p, q in zip(self.params, other.params):
            if p is not None:
                p[:] = q
        return

    def _layer_forward(self, i, spec, x):
        if spec.kind == "dense":
            x2 = x.reshape(x.shape[0], -1)
            W, b = self.weights(i)
            return x2 @ W + b, x2
        if spec.kind == "relu":
            return np.maximum(x, 0.0), x
        if spec.kind == "tanh":
            out = np.tanh(x)
            return out, out
        if spec.kind == "sigmoid":
            out = 0.5 * (1.0 + np.tanh(0.5 * x))
            return out, out
        if spec.kind == "reshape":
            return x.reshape((x.shape[0],) + spec.shape), x.shape
        # embedding
        ids = np.asarray(x).reshape(x.shape[0], -1)
        if not np.issubdtype(ids.dtype, np.integer):
            raise ShapeError("An embedding layer needs integer token ids.")
        if ids.size and (ids.min() < 0 or ids.max() >= spec.vocab):
            raise ShapeError(f"Token ids must lie in [0, {spec.vocab}).")
        dim = spec.out_features // spec.in_features
        table = self.params[i].reshape(spec.vocab, dim)
        return table[ids].reshape(ids.shape[0], -1), ids

    def _layer_backward(self, i, spec, cached, g):
        if spec.kind == "dense":
            W, _ = self.weights(i)
            g2 = g.reshape(g.shape[0], -1)
            n_w = spec.in_features * spec.out_features
            self.grads[i][:n_w] += (cached.T @ g2).ravel()
            self.grads[i][n_w:] += g2.sum(axis=0)
            return g2 @ W.T
        if spec.kind == "relu":
            return g * (cached > 0.0)
        if spec.kind == "tanh":
            return g * (1.0 - cached ** 2)
        if spec.kind == "sigmoid":
            return g * cached * (1.0 - cached)
        if spec.kind == "reshape":
            return g.reshape(cached)
        dim = spec.out_features // spec.in_features
        table_grad = np.zeros((spec.vocab, dim))
        np.add.at(table_grad, cached, g.reshape(cached.shape[0], cached.shape[1], dim))
        self.grads[i] += table_grad.ravel()
        return np.zeros(cached.shape, dtype=np.float64)

    def __repr__(self) -> str:
        kinds = ", ".join(f"{s.kind}({s.in_features}->{s.out_features})" for s in self.layers)
        return f"{self.__class__.__qualname__}(name={self.name!r}, layers=[{kinds}])"


def check_layer_specs(spec: Sequence[LayerSpec]) -> None:
    """
    Raise ConfigError if the stack is empty, a layer is invalid, or two
    consecutive layers disagree on their size.
    """
    if len(spec) == 0:
        raise ConfigError("A network needs at least one layer.")
    for layer in spec:
        layer.validate()
    for layer in spec[1:]:
        if layer.kind == "embedding":
            raise ConfigError("An embedding layer can only be the first layer of a stack.")
    for prev, nxt in zip(spec[:-1], spec[1:]):
        if prev.out_features != nxt.in_features:
            raise ConfigError(
                f"Layer {prev.kind} outputs {prev.out_features} features but the next "
                f"{nxt.kind} layer expects {nxt.in_features}."
            )
    return


def init_network(spec: Sequence[LayerSpec], seed: int, name: str = "") -> Network:
    """
    Build a network with fan-in/fan-out uniform weights and zero biases.

    Dense weights are drawn from U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
    Embedding tables use the same bound with fan_in = vocab, fan_out = dim.

    Parameters
    ----------
    spec: list of LayerSpec
        A shape-consistent stack.
    seed: int
        Seed of the initialization stream. Equal seeds give bit-identical
        parameters.
    name: str
        Label stored in checkpoints.

    Returns
    -------
    Network
    """
    check_layer_specs(spec)
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec:
        if layer.kind == "dense":
            bound = np.sqrt(6.0 / (layer.in_features + layer.out_features))
            w = rng.uniform(-bound, bound, size=layer.in_features * layer.out_features)
            params.append(np.concatenate([w, np.zeros(layer.out_features)]))
        elif layer.kind == "embedding":
            dim = layer.out_features // layer.in_features
            bound = np.sqrt(6.0 / (layer.vocab + dim))
            params.append(rng.uniform(-bound, bound, size=layer.vocab * dim))
        else:
            params.append(None)
    return Network(spec, params, name=name)


def clone_network(net: Network, name: Optional[str] = None) -> Network:
    """A deep copy of the parameters with fresh gradients and optimizer state."""
    params = [None if p is None else p.copy() for p in net.params]
    return Network(net.layers, params, name=net.name if name is None else name)


def forward(net: Network, inputs: np.ndarray) -> np.ndarray:
    return net.forward(inputs)


def backward(net: Network, output_grad: np.ndarray) -> np.ndarray:
    return net.backward(output_grad)


def mse_loss(output: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over every element and its gradient w.r.t. output."""
    diff = output - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def check_gradients(
    params: Sequence[Optional[np.ndarray]],
    analytic: Sequence[Optional[np.ndarray]],
    closure: Callable[[], float],
    eps: float = 1e-5,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Every entry of every array in params is perturbed in place by +-eps and
    closure() re-evaluates the loss. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.

    Returns
    -------
    float
        The largest relative error over all entries.
    """
    if not 0.0 < eps <= 1e-2:
        raise ConfigError(f"eps must lie in (0, 1e-2], got {eps}.")
    max_err = 0.0
    for p, a in zip(params, analytic):
        if p is None:
            continue
        for j in range(p.size):
            original = p[j]
            p[j] = original + eps
            loss_plus = closure()
            p[j] = original - eps
            loss_minus = closure()
            p[j] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericalError("The loss became non-finite during the gradient check.")
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            denom = max(abs(a[j]), abs(numeric), 1e-8)
            max_err = max(max_err, abs(a[j] - numeric) / denom)
    return max_err


def grad_check(
    net: Network,
    inputs: np.ndarray,
    loss: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    eps: float = 1e-5,
) -> float:
    """
    Check net's backward pass against finite differences.

    Parameters
    ----------
    net: Network
        The network under test. Its gradients are cleared before and after.
    inputs: np.ndarray
        A batch of inputs.
    loss: callable
        Maps the network output to ``(value, d value / d output)``.
    eps: float
        Finite-difference step in (0, 1e-2].

    Returns
    -------
    float
        Maximum relative error between analytic and numeric gradients.
    """
    if not 0.0 < eps <= 1e-2:
        raise ConfigError(f"eps must lie in (0, 1e-2], got {eps}.")
    net.zero_grad()
    value, out_grad = loss(net.forward(inputs))
    if not np.isfinite(value):
        raise NumericalError("The loss is non-finite.")
    net.backward(out_grad)
    analytic = [None if g is None else g.copy() for g in net.grads]
    err = check_gradients(net.params, analytic, lambda: loss(net.forward(inputs))[0], eps)
    net.zero_grad()
    return err


@dataclass
class OptimizerConfig:
    """
    Optimizer hyperparameters. Weight decay enters as an additive L2 term
    ``weight_decay*p`` on the gradient.
    """
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f'Optimizer kind must be "sgd" or "adam", not {self.kind}.')
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}.")
        for beta in (self.beta1, self.beta2):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"Adam betas must lie in [0, 1), got {beta}.")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}.")


def optimizer_step(net: Network, cfg: OptimizerConfig) -> None:
    """
    Apply one sgd/adam update in place and clear the gradients.

    Raises NumericalError, leaving every parameter untouched, if any gradient
    is non-finite.
    """
    for g in net.grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"Non-finite gradient in {net.name or 'network'}; the step was skipped.")

    if cfg.kind == "adam":
        state = net.opt_state
        if not state:
            state["t"] = 0
            state["m"] = [None if p is None else np.zeros_like(p) for p in net.params]
            state["v"] = [None if p is None else np.zeros_like(p) for p in net.params]
        state["t"] += 1
        t = state["t"]

    for i, (p, g) in enumerate(zip(net.params, net.grads)):
        if p is None:
            continue
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        if cfg.kind == "sgd":
            p -= cfg.learning_rate * g
        else:
            m, v = state["m"][i], state["v"][i]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g ** 2
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    net.zero_grad()
    return


def reset_optimizer(net: Network) -> None:
    net.opt_state = {}
    return


def _check_same_shapes(a: Network, b: Network) -> None:
    if len(a.params) != len(b.params) or any(
        (p is None) != (q is None) or (p is not None and p.shape != q.shape)
        for p, q in zip(a.params, b.params)
    ):
        raise ShapeError(f"{a.name or 'network'} and {b.name or 'network'} have different parameter shapes.")
    return


# Checkpoints. The byte layout is documented in docs/formats.rst.

def write_networks(f: io.BufferedIOBase, nets: Dict[str, Network],
                   sections: Optional[Dict[bytes, bytes]] = None) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<I", len(nets)))
    for name, net in nets.items():
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            f.write(struct.pack(
                "<BIIIB", _KIND_CODES[layer.kind], layer.in_features,
                layer.out_features, layer.vocab, len(layer.shape)
            ))
            f.write(struct.pack(f"<{len(layer.shape)}I", *layer.shape))
        for p in net.params:
            if p is not None:
                f.write(struct.pack("<Q", p.size))
                f.write(p.astype("<f8").tobytes())
    for tag, payload in (sections or {}).items():
        if len(tag) != 4:
            raise ValueError(f"Section tags are 4 bytes long, got {tag!r}.")
        f.write(tag)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
    return


def read_networks(f: io.BufferedIOBase) -> Tuple[Dict[str, Network], Dict[bytes, bytes]]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"Not a semsec checkpoint (magic {magic!r}, expected {MAGIC!r}).")
    (n_nets,) = _unpack(f, "<I")
    nets = {}
    for _ in range(n_nets):
        (name_len,) = _unpack(f, "<H")
        name = _read_exact(f, name_len).decode("utf-8")
        (n_layers,) = _unpack(f, "<I")
        layers = []
        for _ in range(n_layers):
            code, in_f, out_f, vocab, ndim = _unpack(f, "<BIIIB")
            shape = _unpack(f, f"<{ndim}I") if ndim else ()
            layers.append(LayerSpec(LAYER_KINDS[code], in_f, out_f, shape=tuple(shape), vocab=vocab))
        check_layer_specs(layers)
        params = []
        for layer in layers:
            if layer.n_params == 0:
                params.append(None)
                continue
            (size,) = _unpack(f, "<Q")
            if size != layer.n_params:
                raise ValueError(f"Layer {layer} stores {size} parameters, expected {layer.n_params}.")
            params.append(np.frombuffer(_read_exact(f, 8 * size), dtype="<f8").astype(np.float64))
        nets[name] = Network(layers, params, name=name)

    sections = {}
    while True:
        tag = f.read(4)
        if not tag:
            break
        if len(tag) != 4:
            raise ValueError("The checkpoint ended unexpectedly.")
        (length,) = _unpack(f, "<Q")
        sections[tag] = _read_exact(f, length)
    return nets, sections


def save_networks(path: Union[str, pathlib.Path], nets: Dict[str, Network],
                  sections: Optional[Dict[bytes, bytes]] = None) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        write_networks(f, nets, sections)
    logger.debug(f"Saved {len(nets)} network(s) to {path}.")
    return path


def load_networks(path: Union[str, pathlib.Path]) -> Tuple[Dict[str, Network], Dict[bytes, bytes]]:
    with open(path, "rb") as f:
        return read_networks(f)


def save_network(path: Union[str, pathlib.Path], net: Network) -> pathlib.Path:
    return save_networks(path, {net.name or "net": net})


def load_network(path: Union[str, pathlib.Path]) -> Network:
    nets, _ = load_networks(path)
    if len(nets) != 1:
        raise ValueError(f"{path} holds {len(nets)} networks; use load_networks().")
    return next(iter(nets.values()))


def _read_exact(f, size: int) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise ValueError("The checkpoint ended unexpectedly.")
    return data


def _unpack(f, fmt: str) -> tuple:
    return struct.unpack(fmt, _read_exact(f, struct.calcsize(fmt)))
