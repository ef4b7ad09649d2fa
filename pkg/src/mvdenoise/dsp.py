"""STFT analysis / synthesis bridging time-domain clips and magnitude frames.

Conventions fixed here: periodic Hann window, one-sided spectra with
F = frame_size/2 + 1 bins, 50% overlap for synthesis (COLA-exact), tail
zero padding to complete the last frame, and reconstruction trimmed back
to the analyzed length.  recombine() differentiates through the synthesis
path so magnitude predictions can be scored by time-domain losses.
"""

from __future__ import annotations

import struct

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError, InputError
from .numcore import Tensor


class Waveform:
    """A mono signal: float64 samples plus a sample rate in Hz."""

    def __init__(self, samples, sample_rate: int):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InputError("waveform contains non-finite samples")
        if sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {sample_rate}")
        self.samples = samples
        self.sample_rate = int(sample_rate)

    def __len__(self):
        return self.samples.size


class Spectrogram:
    """One-sided magnitude/phase frames plus the analysis metadata.

    num_samples remembers the pre-padding signal length so synthesis can
    trim back to it; sample_rate rides along for reconstruction.
    """

    def __init__(self, magnitudes, phases, frame_size, hop_size,
                 num_samples, sample_rate, window_tag="hann"):
        self.magnitudes = np.asarray(magnitudes, dtype=np.float64)
        self.phases = np.asarray(phases, dtype=np.float64)
        if self.magnitudes.shape != self.phases.shape:
            raise DimensionError(
                f"magnitude/phase shapes differ: {self.magnitudes.shape} "
                f"vs {self.phases.shape}")
        self.frame_size = int(frame_size)
        self.hop_size = int(hop_size)
        self.num_samples = int(num_samples)
        self.sample_rate = int(sample_rate)
        self.window_tag = window_tag

    @property
    def num_frames(self):
        return self.magnitudes.shape[0]

    @property
    def num_bins(self):
        return self.magnitudes.shape[1]


def hann_window(frame_size: int) -> np.ndarray:
    """Periodic Hann, the variant whose squares overlap-add to a constant."""
    n = np.arange(frame_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_size)


def _check_frame_args(frame_size, hop):
    if frame_size <= 0 or (frame_size & (frame_size - 1)) != 0:
        raise ConfigError(f"frame_size must be a power of two, got {frame_size}")
    if not (0 < hop <= frame_size):
        raise ConfigError(f"hop must be in (0, frame_size], got {hop}")


def stft(w: Waveform, frame_size: int, hop: int) -> Spectrogram:
    """Hann-windowed one-sided STFT; the tail is zero-padded to a full frame."""
    _check_frame_args(frame_size, hop)
    x = w.samples
    if x.size == 0:
        raise InputError("cannot analyze an empty signal")
    if x.size < frame_size:
        raise InputError(
            f"signal of {x.size} samples is shorter than one frame ({frame_size})")
    n_frames = 1 + -(-(x.size - frame_size) // hop)  # ceil division
    padded = np.zeros((n_frames - 1) * hop + frame_size)
    padded[:x.size] = x
    starts = hop * np.arange(n_frames)
    frames = padded[starts[:, None] + np.arange(frame_size)[None, :]]
    spec = np.fft.rfft(frames * hann_window(frame_size), axis=1)
    mags = np.abs(spec)
    phases = np.angle(spec)
    phases[phases == -np.pi] = np.pi  # keep phases in (-pi, pi]
    return Spectrogram(mags, phases, frame_size, hop, x.size, w.sample_rate)


def _synthesis_pieces(s: Spectrogram):
    if s.hop_size != s.frame_size // 2:
        raise ConfigError(
            f"synthesis needs hop == frame_size/2 for overlap-add, "
            f"got hop={s.hop_size} frame={s.frame_size}")
    window = hann_window(s.frame_size)
    n_frames = s.num_frames
    total = (n_frames - 1) * s.hop_size + s.frame_size
    env = np.zeros(total)
    for t in range(n_frames):
        env[t * s.hop_size: t * s.hop_size + s.frame_size] += window * window
    env = np.maximum(env, 1e-12)
    return window, total, env


def _overlap_add(time_frames: np.ndarray, s: Spectrogram, window, total, env):
    acc = np.zeros(total)
    for t in range(s.num_frames):
        acc[t * s.hop_size: t * s.hop_size + s.frame_size] += window * time_frames[t]
    return (acc / env)[:s.num_samples]


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis normalized by the window-square envelope."""
    window, total, env = _synthesis_pieces(s)
    complex_spec = s.magnitudes * np.exp(1j * s.phases)
    time_frames = np.fft.irfft(complex_spec, n=s.frame_size, axis=1)
    return Waveform(_overlap_add(time_frames, s, window, total, env),
                    s.sample_rate)


def recombine(pred_magnitudes: Tensor, phase_source: Spectrogram) -> Tensor:
    """Synthesize a waveform from predicted magnitudes and borrowed phases.

    Returns the sample sequence as a tape tensor so a time-domain loss can
    be differentiated back into the magnitude frames.  The map is linear in
    the magnitudes for fixed phases; its adjoint is computed bin-by-bin
    through the inverse DFT (interior one-sided bins count twice, the DC
    and Nyquist bins once, and their imaginary parts are discarded by the
    real inverse transform).
    """
    if not isinstance(pred_magnitudes, Tensor):
        pred_magnitudes = Tensor(np.asarray(pred_magnitudes, dtype=np.float64))
    if pred_magnitudes.data.shape != phase_source.magnitudes.shape:
        raise DimensionError(
            f"predicted magnitudes {pred_magnitudes.data.shape} do not match "
            f"phase source frames {phase_source.magnitudes.shape}")
    s = phase_source
    window, total, env = _synthesis_pieces(s)
    frame = s.frame_size
    phase = np.exp(1j * s.phases)

    time_frames = np.fft.irfft(pred_magnitudes.data * phase, n=frame, axis=1)
    out = Tensor(_overlap_add(time_frames, s, window, total, env))

    mult = np.full(s.num_bins, 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    imag_live = np.ones(s.num_bins)
    imag_live[0] = 0.0
    imag_live[-1] = 0.0

    def bwd(g):
        acc = np.zeros(total)
        acc[:s.num_samples] = g / env[:s.num_samples]
        g_frames = np.empty((s.num_frames, frame))
        for t in range(s.num_frames):
            g_frames[t] = window * acc[t * s.hop_size: t * s.hop_size + frame]
        spec_grad = np.fft.rfft(g_frames, axis=1) * (mult / frame)
        grad_m = (phase.real * spec_grad.real
                  + phase.imag * spec_grad.imag * imag_live)
        nc._accum(pred_magnitudes, grad_m)

    return nc._record(out, bwd)


# ---------------------------------------------------------------------------
# WAV ingestion (PCM 16-bit mono little-endian), used by the CLI data paths

def write_wav(path, w: Waveform) -> None:
    clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    data = pcm.tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(data)))
        f.write(b"WAVEfmt ")
        f.write(struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate,
                            w.sample_rate * 2, 2, 16))
        f.write(b"data")
        f.write(struct.pack("<I", len(data)))
        f.write(data)


def read_wav(path) -> Waveform:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 44 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise InputError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        size = struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise InputError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or channels != 1 or bits != 16:
        raise InputError(
            f"{path}: only PCM 16-bit mono supported, "
            f"got format={audio_format} channels={channels} bits={bits}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)
