"""Synthetic multi-channel scenes: SNR ladders and moving-noise geometry.

Every generator is pure given its seed.  Scenes keep the additive
decomposition explicit: channel i is exactly clean + noise_component[i],
so tests and metrics can reason about the parts separately.

Static scenes place k channels on a linearly spaced SNR ladder; the
decreasing ladder is the elementwise negation of the increasing one, which
makes the k=30 multisets of the two orders identical bit for bit.  Dynamic
scenes put the target at the origin, microphones uniformly inside a disk
of radius 0.9, and drive the noise source once around the unit circle per
clip with inverse-distance attenuation (floored at 0.1); one global noise
scale then pins the mean whole-clip SNR across channels to 0 dB.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .dsp import Waveform, read_wav, write_wav
from .errors import DimensionError, InputError

DEFAULT_SR = 16000
DEFAULT_DURATION_S = 2.0
MIC_DISK_RADIUS = 0.9
NOISE_CIRCLE_RADIUS = 1.0
DISTANCE_FLOOR = 0.1
SNR_LADDER_MAX_K = 30


@dataclass
class GeometryRecord:
    mic_positions: np.ndarray  # k x 2, strictly inside the noise circle
    start_phase: float
    circle_radius: float = NOISE_CIRCLE_RADIUS
    revolutions: float = 1.0
    target_position: tuple = (0.0, 0.0)

    def validate(self):
        r = np.hypot(self.mic_positions[:, 0], self.mic_positions[:, 1])
        if np.any(r >= self.circle_radius):
            raise InputError("microphones must sit strictly inside the noise circle")


@dataclass
class Scene:
    channels: list          # k Waveforms
    clean: Waveform
    noise_components: list  # k float arrays; channel = clean + component
    meta: dict

    def __post_init__(self):
        if len(self.channels) < 1:
            raise InputError("a scene needs at least one channel")
        n = len(self.clean)
        for ch in self.channels:
            if len(ch) != n or ch.sample_rate != self.clean.sample_rate:
                raise InputError("channels must match the clean signal's "
                                 "length and sample rate")

    @property
    def num_channels(self):
        return len(self.channels)


# ---------------------------------------------------------------------------
# sources

def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    if rms == 0.0:
        raise InputError("source came out identically zero")
    return x / rms


def synth_source(kind: str, duration_s: float = DEFAULT_DURATION_S,
                 seed: int = 0, sample_rate: int = DEFAULT_SR) -> Waveform:
    """Seeded deterministic test signals, normalized to unit RMS.

    tonal: a few harmonics of a low fundamental with slow amplitude
    modulation.  chirp: a linear frequency sweep.  noise_band: Gaussian
    noise bandpassed to a random band.
    """
    if duration_s <= 0:
        raise InputError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "tonal":
        f0 = rng.uniform(100.0, 400.0)
        n_harm = int(rng.integers(3, 7))
        x = np.zeros(n)
        for m in range(1, n_harm + 1):
            amp = rng.uniform(0.3, 1.0) / m
            x += amp * np.sin(2 * np.pi * m * f0 * t + rng.uniform(0, 2 * np.pi))
        f_am = rng.uniform(2.0, 8.0)
        x *= 1.0 + 0.5 * np.sin(2 * np.pi * f_am * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f_start = rng.uniform(200.0, 800.0)
        f_end = rng.uniform(1500.0, 3500.0)
        sweep = f_start * t + 0.5 * (f_end - f_start) * t * t / duration_s
        x = np.sin(2 * np.pi * sweep + rng.uniform(0, 2 * np.pi))
    elif kind == "noise_band":
        f_lo = rng.uniform(100.0, 1000.0)
        f_hi = f_lo + rng.uniform(500.0, 2500.0)
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
        x = np.fft.irfft(spec, n=n)
    else:
        raise InputError(f"unknown source kind {kind!r}")
    return Waveform(_unit_rms(x), sample_rate)


# ---------------------------------------------------------------------------
# mixing

def _energies(clean: Waveform, noise: Waveform):
    if len(clean) != len(noise):
        raise DimensionError(
            f"clean and noise lengths differ: {len(clean)} vs {len(noise)}")
    ec = float(clean.samples @ clean.samples)
    en = float(noise.samples @ noise.samples)
    if ec <= 0.0 or en <= 0.0:
        raise InputError("clean and noise must both carry energy")
    return ec, en


def snr_gain(clean: Waveform, noise: Waveform, snr_db: float) -> float:
    """Gain g with 10*log10(E_clean / E(g*noise)) equal to snr_db."""
    ec, en = _energies(clean, noise)
    return float(np.sqrt(ec / en * 10.0 ** (-snr_db / 10.0)))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    g = snr_gain(clean, noise, snr_db)
    return Waveform(clean.samples + g * noise.samples, clean.sample_rate)


# ---------------------------------------------------------------------------
# static ladder scenes

def ladder_snrs(k: int, order: str) -> list:
    """Per-channel SNRs in dB for the static scenario.

    Increasing runs -5 .. -5 + k/3, linearly spaced over k channels;
    decreasing is its elementwise negation (5 .. 5 - k/3).  Values are
    computed as exact integer ratios so negation, not re-spacing, relates
    the two orders.  k=1 degenerates to the range's first endpoint.
    """
    if not 1 <= k <= SNR_LADDER_MAX_K:
        raise InputError(f"channel count must be in [1, {SNR_LADDER_MAX_K}], got {k}")
    if k == 1:
        inc = [-5.0]
    else:
        den = 3 * (k - 1)
        inc = [(i * k - 15 * (k - 1)) / den for i in range(k)]
    if order == "increasing":
        return inc
    if order == "decreasing":
        return [-s for s in inc]
    raise InputError(f"order must be increasing or decreasing, got {order!r}")


def static_ladder(clean: Waveform, noise: Waveform, k: int, order: str,
                  seed: int = 0) -> Scene:
    """k channels of clean + noise at ladder SNRs; order random shuffles."""
    if order == "random":
        snrs = list(np.random.default_rng(seed).permutation(
            ladder_snrs(k, "increasing")))
    else:
        snrs = ladder_snrs(k, order)
    components = [snr_gain(clean, noise, s) * noise.samples for s in snrs]
    channels = [Waveform(clean.samples + c, clean.sample_rate)
                for c in components]
    meta = {"scenario": "static", "order": order, "seed": seed,
            "snrs_db": [float(s) for s in snrs]}
    return Scene(channels, clean, components, meta)


# ---------------------------------------------------------------------------
# dynamic moving-noise scenes

def draw_mic_positions(k: int, seed) -> np.ndarray:
    """k points uniform in the disk of radius MIC_DISK_RADIUS.

    Draws are paired per mic, so the leading rows of a large layout are
    bit-identical to a smaller layout drawn from the same seed.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, size=(k, 2))
    radius = MIC_DISK_RADIUS * np.sqrt(u[:, 0])
    angle = 2 * np.pi * u[:, 1]
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def noise_gains(geometry: GeometryRecord, n_samples: int) -> np.ndarray:
    """k x n inverse-distance gain trajectories along the circular path."""
    frac = np.arange(n_samples) / n_samples
    theta = geometry.start_phase + 2 * np.pi * geometry.revolutions * frac
    px = geometry.circle_radius * np.cos(theta)
    py = geometry.circle_radius * np.sin(theta)
    dx = px[None, :] - geometry.mic_positions[:, 0][:, None]
    dy = py[None, :] - geometry.mic_positions[:, 1][:, None]
    dist = np.hypot(dx, dy)
    return 1.0 / np.maximum(dist, DISTANCE_FLOOR)


def dynamic_scene(clean: Waveform, noise: Waveform, k: int, seed: int = 0,
                  mic_positions=None) -> Scene:
    """Moving-noise scene with the mean whole-clip SNR pinned to 0 dB.

    mic_positions overrides the seeded draw (same k x 2 layout); the
    noise path's start phase stays seeded either way.
    """
    if k < 1:
        raise InputError(f"channel count must be >= 1, got {k}")
    ec, _ = _energies(clean, noise)
    rng = np.random.default_rng(seed)
    start_phase = rng.uniform(0.0, 2 * np.pi)
    if mic_positions is None:
        mic_positions = draw_mic_positions(k, seed=int(rng.integers(0, 2**31)))
    else:
        mic_positions = np.asarray(mic_positions, dtype=np.float64)
        if mic_positions.shape != (k, 2):
            raise DimensionError(
                f"mic_positions must be {k} x 2, got {mic_positions.shape}")
    geometry = GeometryRecord(mic_positions=mic_positions,
                              start_phase=float(start_phase))
    geometry.validate()

    gains = noise_gains(geometry, len(clean))
    raw = gains * noise.samples[None, :]
    raw_energies = np.einsum("ij,ij->i", raw, raw)
    # one global scale alpha makes the mean whole-clip SNR over mics 0 dB:
    # mean_i 10 log10(E_clean / (alpha^2 E_i)) = 0
    log_alpha_sq = np.log10(ec) - float(np.mean(np.log10(raw_energies)))
    alpha = 10.0 ** (log_alpha_sq / 2.0)
    components = [alpha * raw[i] for i in range(k)]
    channels = [Waveform(clean.samples + c, clean.sample_rate)
                for c in components]
    meta = {"scenario": "dynamic", "seed": seed, "geometry": {
        "mic_positions": mic_positions.tolist(),
        "start_phase": float(start_phase),
        "circle_radius": geometry.circle_radius,
        "revolutions": geometry.revolutions,
    }, "noise_scale": float(alpha)}
    return Scene(channels, clean, components, meta)


# ---------------------------------------------------------------------------
# canonical scene recipe shared by training and evaluation code

NOISE_KINDS = ("chirp", "noise_band")


def make_scene(scenario: str, k: int, seed: int, order: str = "random",
               duration_s: float = DEFAULT_DURATION_S,
               sample_rate: int = DEFAULT_SR, mic_positions=None) -> Scene:
    """One seeded scene: tonal target plus a random interferer kind."""
    rng = np.random.default_rng(seed)
    clean = synth_source("tonal", duration_s, seed=int(rng.integers(0, 2**31)),
                         sample_rate=sample_rate)
    kind = NOISE_KINDS[int(rng.integers(0, len(NOISE_KINDS)))]
    noise = synth_source(kind, duration_s, seed=int(rng.integers(0, 2**31)),
                         sample_rate=sample_rate)
    scene_seed = int(rng.integers(0, 2**31))
    if scenario == "static":
        return static_ladder(clean, noise, k, order, seed=scene_seed)
    if scenario == "dynamic":
        return dynamic_scene(clean, noise, k, seed=scene_seed,
                             mic_positions=mic_positions)
    raise InputError(f"unknown scenario {scenario!r}")


# ---------------------------------------------------------------------------
# scene export / import

def export_scene(scene: Scene, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    peak = max(float(np.max(np.abs(w.samples)))
               for w in [scene.clean] + scene.channels)
    scale = max(1.0, peak / 0.99)
    write_wav(os.path.join(directory, "clean.wav"),
              Waveform(scene.clean.samples / scale, scene.clean.sample_rate))
    for i, ch in enumerate(scene.channels):
        write_wav(os.path.join(directory, f"ch{i:02d}.wav"),
                  Waveform(ch.samples / scale, ch.sample_rate))
    meta = dict(scene.meta)
    meta["num_channels"] = scene.num_channels
    meta["sample_rate"] = scene.clean.sample_rate
    meta["amplitude_scale"] = scale
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def import_scene(directory) -> Scene:
    meta_path = os.path.join(directory, "meta.json")
    if not os.path.exists(meta_path):
        raise InputError(f"{directory}: missing meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    scale = float(meta.get("amplitude_scale", 1.0))
    clean = read_wav(os.path.join(directory, "clean.wav"))
    clean = Waveform(clean.samples * scale, clean.sample_rate)
    channels = []
    for i in range(int(meta["num_channels"])):
        w = read_wav(os.path.join(directory, f"ch{i:02d}.wav"))
        channels.append(Waveform(w.samples * scale, w.sample_rate))
    # 16-bit quantization broke the exact decomposition; keep residuals
    components = [ch.samples - clean.samples for ch in channels]
    return Scene(channels, clean, components, meta)
