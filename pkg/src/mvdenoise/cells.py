"""Recurrent cells and the dense projections framing them.

Two cell types: a plain RNN (h = act(W_h x + U_h h_prev + b)) and a GRU
with the update convention

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_c x + U_c (r * h) + b_c)
    h_new = (1 - z) * h_prev + z * c

so z -> 1 follows the candidate and z -> 0 keeps the previous state.
Biases are included everywhere; zeroing them recovers the bias-free form.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .numcore import Tensor


class DenseLayer:
    """Fully-connected layer y = act(W x + b)."""

    def __init__(self, out_dim: int, in_dim: int, activation_tag: str = "softplus"):
        if out_dim <= 0 or in_dim <= 0:
            raise ConfigError(f"dense dims must be positive, got {out_dim}x{in_dim}")
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.activation_tag = activation_tag
        self.W = Tensor(np.zeros((out_dim, in_dim)))
        self.b = Tensor(np.zeros(out_dim))

    def named_params(self):
        return [("W", self.W), ("b", self.b)]

    def set_param(self, name, tensor):
        if name not in ("W", "b"):
            raise KeyError(name)
        setattr(self, name, tensor)

    def __call__(self, x: Tensor) -> Tensor:
        return nc.activation(self.activation_tag,
                             nc.add(nc.matmul(self.W, x), self.b))


class PlainRnnCell:
    """Single-matrix recurrence h = act(W_h x + U_h h_prev + b)."""

    tag = "plain"

    def __init__(self, in_dim: int, hidden: int, activation_tag: str = "tanh"):
        if in_dim <= 0 or hidden <= 0:
            raise ConfigError(f"cell dims must be positive, got in={in_dim} hidden={hidden}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.activation_tag = activation_tag
        self.W_h = Tensor(np.zeros((hidden, in_dim)))
        self.U_h = Tensor(np.zeros((hidden, hidden)))
        self.b = Tensor(np.zeros(hidden))

    def named_params(self):
        return [("W_h", self.W_h), ("U_h", self.U_h), ("b", self.b)]

    def set_param(self, name, tensor):
        if name not in ("W_h", "U_h", "b"):
            raise KeyError(name)
        setattr(self, name, tensor)

    def step(self, x: Tensor, h_prev: Tensor) -> Tensor:
        pre = nc.add(nc.add(nc.matmul(self.W_h, x), nc.matmul(self.U_h, h_prev)),
                     self.b)
        return nc.activation(self.activation_tag, pre)


class GruCell:
    """Gated recurrent unit; see the module docstring for the convention."""

    tag = "gru"

    def __init__(self, in_dim: int, hidden: int):
        if in_dim <= 0 or hidden <= 0:
            raise ConfigError(f"cell dims must be positive, got in={in_dim} hidden={hidden}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.W_z = Tensor(np.zeros((hidden, in_dim)))
        self.W_r = Tensor(np.zeros((hidden, in_dim)))
        self.W_c = Tensor(np.zeros((hidden, in_dim)))
        self.U_z = Tensor(np.zeros((hidden, hidden)))
        self.U_r = Tensor(np.zeros((hidden, hidden)))
        self.U_c = Tensor(np.zeros((hidden, hidden)))
        self.b_z = Tensor(np.zeros(hidden))
        self.b_r = Tensor(np.zeros(hidden))
        self.b_c = Tensor(np.zeros(hidden))

    _param_names = ("W_z", "W_r", "W_c", "U_z", "U_r", "U_c", "b_z", "b_r", "b_c")

    def named_params(self):
        return [(name, getattr(self, name)) for name in self._param_names]

    def set_param(self, name, tensor):
        if name not in self._param_names:
            raise KeyError(name)
        setattr(self, name, tensor)

    def step(self, x: Tensor, h_prev: Tensor) -> Tensor:
        z = nc.sigmoid(nc.add(nc.add(nc.matmul(self.W_z, x),
                                     nc.matmul(self.U_z, h_prev)), self.b_z))
        r = nc.sigmoid(nc.add(nc.add(nc.matmul(self.W_r, x),
                                     nc.matmul(self.U_r, h_prev)), self.b_r))
        rh = nc.mul(r, h_prev)
        c = nc.tanh(nc.add(nc.add(nc.matmul(self.W_c, x),
                                  nc.matmul(self.U_c, rh)), self.b_c))
        # (1 - z) * h_prev + z * c, written without a ones constant
        return nc.add(nc.sub(h_prev, nc.mul(z, h_prev)), nc.mul(z, c))


def make_cell(tag: str, in_dim: int, hidden: int):
    if tag == "gru":
        return GruCell(in_dim, hidden)
    if tag == "plain":
        return PlainRnnCell(in_dim, hidden)
    raise ConfigError(f"unknown cell tag {tag!r}")


def cell_step(cell, x: Tensor, h_prev: Tensor) -> Tensor:
    """One recurrence step; validates shapes against the cell dims."""
    if x.data.shape != (cell.in_dim,):
        raise DimensionError(f"cell input shape {x.shape}, expected ({cell.in_dim},)")
    if h_prev.data.shape != (cell.hidden,):
        raise DimensionError(f"hidden shape {h_prev.shape}, expected ({cell.hidden},)")
    return cell.step(x, h_prev)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Orthogonal n x n matrix from a QR of a Gaussian draw, sign-fixed."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_params(obj, seed: int) -> None:
    """Initialize a cell or dense layer in place.

    Input-facing W matrices get Glorot-uniform draws, recurrent U matrices
    are orthogonalized Gaussians, biases stay zero.  Parameter order is
    fixed by named_params, so a given seed is bit-reproducible.
    """
    rng = np.random.default_rng(seed)
    for name, t in obj.named_params():
        if name.startswith("U"):
            t.data = orthogonal(rng, t.data.shape[0])
        elif name.startswith("W"):
            t.data = glorot_uniform(rng, *t.data.shape)
        # biases stay zero


# alias used where the cell/layer distinction matters at the call site
init_cell = init_params
