"""Parameter containers and the small set of layers the agents use."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParameterSet:
    """Ordered collection of named parameter tensors with gradient slots.

    Names are unique; every parameter keeps a gradient buffer of its own
    shape. A set may be copied for a worker; forward/backward never share
    mutable state between copies.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Tensor(np.asarray(data), requires_grad=True, name=name)
        p.zero_grad()
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, p in self._params.items():
            out.add(name, p.data.copy())
        return out

    def load_values(self, other: "ParameterSet") -> None:
        """Overwrite values in place from another set with the same names."""
        if self.names() != other.names():
            raise ValueError("parameter sets have different names")
        for name, p in self._params.items():
            np.copyto(p.data, other[name].data)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {name: p.grad for name, p in self._params.items()}

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """y = W x + b with W of shape (out, in)."""

    def __init__(self, params: ParameterSet, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = params.add(f"{name}.w", uniform_init(rng, (out_dim, in_dim), in_dim, dtype))
        self.b = params.add(f"{name}.b", uniform_init(rng, (out_dim,), in_dim, dtype))
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(self.w, x), self.b)


class MLP:
    """Single-hidden-layer perceptron with tanh hidden units."""

    def __init__(self, params: ParameterSet, name: str, in_dim: int, hidden: int,
                 out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.l1 = Linear(params, f"{name}.l1", in_dim, hidden, rng, dtype)
        self.l2 = Linear(params, f"{name}.l2", hidden, out_dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(ad.tanh(self.l1(x)))


class DeepLSTM:
    """Two-layer LSTM where every layer sees the raw input.

    Layer l consumes [x_t, h^l_{t-1}, h^{l-1}_t]; the first layer has no
    lower layer, so its input is just [x_t, h^1_{t-1}]. Gates i, f, o are
    sigmoids and the cell candidate is tanh. The step output is the
    concatenation [h^1_t, h^2_t].

    The forget-gate bias is shifted by +1 after the uniform draw, the
    customary library default that keeps early memories alive.
    """

    GATES = ("i", "f", "s", "o")

    def __init__(self, params: ParameterSet, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator, num_layers: int = 2, dtype=np.float32):
        self.hidden = hidden
        self.num_layers = num_layers
        self.in_dim = in_dim
        self.layers = []
        for layer in range(num_layers):
            lin = in_dim + hidden + (hidden if layer > 0 else 0)
            gates = {}
            for gate in self.GATES:
                w = params.add(f"{name}.l{layer + 1}.w_{gate}",
                               uniform_init(rng, (hidden, lin), lin, dtype))
                b = params.add(f"{name}.l{layer + 1}.b_{gate}",
                               uniform_init(rng, (hidden,), lin, dtype))
                if gate == "f":
                    b.data += np.asarray(1.0, dtype=dtype)
                gates[gate] = (w, b)
            self.layers.append(gates)
        self.dtype = dtype

    def zero_state(self):
        z = lambda: Tensor(np.zeros(self.hidden, dtype=self.dtype))
        return [(z(), z()) for _ in range(self.num_layers)]

    def output_dim(self) -> int:
        return self.hidden * self.num_layers

    def __call__(self, x: Tensor, state):
        if x.shape != (self.in_dim,):
            raise ad.ShapeError(f"lstm: input shape {x.shape}, expected ({self.in_dim},)")
        new_state = []
        outputs = []
        below = None
        for layer, gates in enumerate(self.layers):
            h_prev, c_prev = state[layer]
            parts = [x, h_prev] if below is None else [x, h_prev, below]
            xin = ad.concat(parts)
            i = ad.sigmoid(ad.add(ad.matmul(gates["i"][0], xin), gates["i"][1]))
            f = ad.sigmoid(ad.add(ad.matmul(gates["f"][0], xin), gates["f"][1]))
            s = ad.tanh(ad.add(ad.matmul(gates["s"][0], xin), gates["s"][1]))
            o = ad.sigmoid(ad.add(ad.matmul(gates["o"][0], xin), gates["o"][1]))
            c = ad.add(ad.mul(f, c_prev), ad.mul(i, s))
            h = ad.mul(o, ad.tanh(c))
            new_state.append((h, c))
            outputs.append(h)
            below = h
        return ad.concat(outputs), new_state
