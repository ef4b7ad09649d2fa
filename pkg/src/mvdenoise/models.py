"""The three denoisers over multi-channel magnitude spectra.

All share the same skeleton: a softplus front dense layer projecting each
F-bin frame down to front_dim, one recurrent cell, and a softplus back
dense layer mapping hidden state to F predicted magnitudes.  They differ
only in how the cell is unrolled:

  avg_rnn   mean over channels, then unroll across time.
  mvn1d     per time frame, unroll across channels from a zero state;
            nothing crosses time frames.
  mvn2d     serpentine: within each time frame unroll across channels, and
            hand the last channel's state to the first channel of the next
            frame.  The optional bidirectional variant runs a second cell
            over the channels in reverse order (with its own time-carried
            state) and concatenates both final states before the back layer.

Predictions always come from the final hidden state of the chain, and none
of the unrollings fixes the channel count, so one set of weights serves any
number of channels at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells as cl
from . import numcore as nc
from .errors import ConfigError, DimensionError, InputError
from .numcore import Tensor

VARIANTS = ("avg_rnn", "mvn1d", "mvn2d")


@dataclass
class ModelConfig:
    input_bins: int
    front_dim: int = 512
    hidden: int = 512
    cell_tag: str = "gru"
    variant: str = "mvn2d"
    bidirectional_channels: bool = False
    input_scale: float = 1.0  # applied to magnitudes before the front layer

    def validate(self):
        if self.input_bins <= 0 or self.front_dim <= 0 or self.hidden <= 0:
            raise ConfigError(f"model dims must be positive: {self}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.cell_tag not in ("gru", "plain"):
            raise ConfigError(f"unknown cell tag {self.cell_tag!r}")
        if self.bidirectional_channels and self.variant != "mvn2d":
            raise ConfigError(
                "bidirectional_channels applies to the mvn2d variant only")
        if self.input_scale <= 0:
            raise ConfigError(f"input_scale must be positive, got {self.input_scale}")


class MultiChannelSpectra:
    """k x T x F magnitude stack with a channel-order record."""

    def __init__(self, data, channel_order=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] < 1:
            raise InputError(f"need a k x T x F stack with k >= 1, got {data.shape}")
        if np.any(data < 0):
            raise InputError("magnitudes must be nonnegative")
        self.data = data
        self.channel_order = (list(range(data.shape[0]))
                              if channel_order is None else list(channel_order))
        if len(self.channel_order) != data.shape[0]:
            raise InputError("channel_order length does not match channel count")

    @classmethod
    def from_spectrograms(cls, specs, channel_order=None):
        if not specs:
            raise InputError("no channels given")
        first = specs[0]
        for s in specs[1:]:
            if (s.magnitudes.shape != first.magnitudes.shape
                    or s.frame_size != first.frame_size
                    or s.hop_size != first.hop_size
                    or s.window_tag != first.window_tag):
                raise InputError("channels disagree on analysis metadata")
        return cls(np.stack([s.magnitudes for s in specs]), channel_order)

    @property
    def num_channels(self):
        return self.data.shape[0]

    @property
    def num_frames(self):
        return self.data.shape[1]

    @property
    def num_bins(self):
        return self.data.shape[2]


class Model:
    """Parameter container plus the variant dispatch."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.front = cl.DenseLayer(cfg.front_dim, cfg.input_bins, "softplus")
        self.cell = cl.make_cell(cfg.cell_tag, cfg.front_dim, cfg.hidden)
        back_in = cfg.hidden * (2 if cfg.bidirectional_channels else 1)
        self.back = cl.DenseLayer(cfg.input_bins, back_in, "softplus")
        self._parts = [("front", self.front), ("cell", self.cell)]
        if cfg.bidirectional_channels:
            self.cell_rev = cl.make_cell(cfg.cell_tag, cfg.front_dim, cfg.hidden)
            self._parts.append(("cell_rev", self.cell_rev))
        self._parts.append(("back", self.back))

    def named_params(self):
        out = []
        for prefix, part in self._parts:
            out.extend((f"{prefix}.{name}", t) for name, t in part.named_params())
        return out

    def set_param(self, name, tensor):
        prefix, _, local = name.partition(".")
        for pname, part in self._parts:
            if pname == prefix:
                part.set_param(local, tensor)
                return
        raise KeyError(name)

    def forward(self, spectra: MultiChannelSpectra) -> Tensor:
        if spectra.num_bins != self.cfg.input_bins:
            raise DimensionError(
                f"input has {spectra.num_bins} bins, model expects "
                f"{self.cfg.input_bins}")
        fn = {"avg_rnn": forward_avg_rnn,
              "mvn1d": forward_mvn1d,
              "mvn2d": forward_mvn2d}[self.cfg.variant]
        return fn(self, spectra)


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Construct and initialize a model; one seed fixes every parameter."""
    model = Model(cfg)
    rng = np.random.default_rng(seed)
    for _, part in model._parts:
        cl.init_params(part, seed=int(rng.integers(0, 2**31)))
    return model


def _scaled(model: Model, spectra: MultiChannelSpectra) -> np.ndarray:
    return spectra.data * model.cfg.input_scale


def _zero_state(model: Model) -> Tensor:
    return Tensor(np.zeros(model.cfg.hidden))


def forward_avg_rnn(model: Model, spectra: MultiChannelSpectra) -> Tensor:
    """Channel mean, then a plain time unrolling."""
    data = _scaled(model, spectra).mean(axis=0)
    h = _zero_state(model)
    ys = []
    for t in range(data.shape[0]):
        h = cl.cell_step(model.cell, model.front(Tensor(data[t])), h)
        ys.append(model.back(h))
    return nc.stack(ys)


def forward_mvn1d(model: Model, spectra: MultiChannelSpectra) -> Tensor:
    """Channel unrolling restarted from zero at every time frame."""
    data = _scaled(model, spectra)
    k, n_frames = spectra.num_channels, spectra.num_frames
    ys = []
    for t in range(n_frames):
        h = _zero_state(model)
        for i in range(k):
            h = cl.cell_step(model.cell, model.front(Tensor(data[i, t])), h)
        ys.append(model.back(h))
    return nc.stack(ys)


def forward_mvn2d(model: Model, spectra: MultiChannelSpectra) -> Tensor:
    """Serpentine unrolling across channels and time."""
    data = _scaled(model, spectra)
    k, n_frames = spectra.num_channels, spectra.num_frames
    bidir = model.cfg.bidirectional_channels
    carry = _zero_state(model)
    carry_rev = _zero_state(model) if bidir else None
    ys = []
    for t in range(n_frames):
        fronts = [model.front(Tensor(data[i, t])) for i in range(k)]
        h = carry
        for i in range(k):
            h = cl.cell_step(model.cell, fronts[i], h)
        carry = h
        if bidir:
            hr = carry_rev
            for i in reversed(range(k)):
                hr = cl.cell_step(model.cell_rev, fronts[i], hr)
            carry_rev = hr
            ys.append(model.back(nc.concat(h, hr)))
        else:
            ys.append(model.back(h))
    return nc.stack(ys)
