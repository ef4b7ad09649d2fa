"""Training loop, Adam optimizer, checkpointing, and evaluation helpers.

The loop is deliberately plain: per epoch, shuffle the scene pool, take
batches, average the waveform-domain loss over the batch, backprop through
the whole pipeline (front/cell/back, synthesis with last-channel phase),
clip the global gradient norm, and apply Adam.  Validation scores are mean
scale-invariant SDR over a held-out pool; the best parameters are kept and
early stopping counts epochs since the best.

Checkpoint format (all little-endian):

    bytes 0..3   magic "MVNC"
    u32          format version (currently 1)
    u32          header length, then that many bytes of JSON: model and
                 train configs, epoch, best validation SDR, optimizer step
                 count, RNG state
    u32          array count, then per array: u16 name length, name bytes,
                 u8 rank, u32 extents, row-major float64 payload
    u32          CRC32 of everything between the magic and this field

Model parameters are stored under their model names; Adam moments ride
along as "adam.m:<name>" / "adam.v:<name>".
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp, models, objectives
from . import numcore as nc
from .errors import CheckpointError, ConfigError, TrainingAbort
from .models import Model, ModelConfig
from .numcore import Tape, Tensor

CHECKPOINT_MAGIC = b"MVNC"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer_tag: str = "adam"
    grad_clip_norm: float = 5.0
    seed: int = 0
    channels_k_train: int = 5
    early_stop_patience: int = 5  # <= 0 disables early stopping

    def validate(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError(f"epochs and batch_size must be positive: {self}")
        if self.learning_rate < 0 or self.grad_clip_norm <= 0:
            raise ConfigError(f"bad learning_rate or grad_clip_norm: {self}")
        if self.optimizer_tag != "adam":
            raise ConfigError(f"unknown optimizer {self.optimizer_tag!r}")
        if self.channels_k_train < 1:
            raise ConfigError(f"channels_k_train must be >= 1: {self}")


# ---------------------------------------------------------------------------
# forward helpers shared with evaluation code

def analysis_frame(input_bins: int) -> int:
    # one-sided bins F = frame/2 + 1, so the frame size is implied by F
    return 2 * (input_bins - 1)


def scene_features(scene, input_bins: int):
    """STFT all channels; returns (spectra stack, last channel spectrogram)."""
    frame = analysis_frame(input_bins)
    specs = [dsp.stft(ch, frame, frame // 2) for ch in scene.channels]
    return models.MultiChannelSpectra.from_spectrograms(specs), specs[-1]


def scene_loss(model: Model, spectra, phase_spec, clean_samples) -> Tensor:
    pred = model.forward(spectra)
    est = dsp.recombine(pred, phase_spec)
    return objectives.sdr_loss(est, clean_samples)


def denoise_scene(model: Model, scene) -> np.ndarray:
    """Tape-free reconstruction of a scene's estimate."""
    spectra, phase_spec = scene_features(scene, model.cfg.input_bins)
    pred = model.forward(spectra)
    return dsp.recombine(pred, phase_spec).data


def evaluate_si_sdr(model: Model, scenes) -> float:
    """Mean scale-invariant SDR in dB over a scene pool."""
    scores = [objectives.si_sdr(denoise_scene(model, s), s.clean.samples).value
              for s in scenes]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# optimizer

def clip_gradients(tensors, max_norm: float) -> float:
    """Scale all grads so the global norm is at most max_norm; returns pre-norm."""
    total_sq = 0.0
    for t in tensors:
        if t.grad is not None:
            total_sq += float((t.grad * t.grad).sum())
    total = float(np.sqrt(total_sq))
    if total > max_norm:
        factor = max_norm / total
        for t in tensors:
            if t.grad is not None:
                t.grad *= factor
    return total


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, names_shapes):
        self.m = {n: np.zeros(s) for n, s in names_shapes}
        self.v = {n: np.zeros(s) for n, s in names_shapes}
        self.step_count = 0

    @classmethod
    def for_model(cls, model: Model) -> "AdamState":
        return cls([(n, t.data.shape) for n, t in model.named_params()])

    def apply(self, model: Model, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.BETA1 ** t
        bc2 = 1.0 - self.BETA2 ** t
        for name, p in model.named_params():
            g = p.grad if p.grad is not None else np.zeros(p.data.shape)
            m = self.m[name]
            v = self.v[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.EPS)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_val_sdr: float = float("-inf")
    best_epoch: int = 0
    epochs_run: int = 0


def _batch_mean_loss(model, records):
    losses = [scene_loss(model, spectra, phase, clean)
              for spectra, phase, clean, _ in records]
    total = losses[0]
    for extra in losses[1:]:
        total = nc.add(total, extra)
    return nc.scale(total, 1.0 / len(losses))


def train(model: Model, cfg: TrainConfig, train_scenes, val_scenes,
          checkpoint_path=None, history_path=None, log=None,
          adam=None, start_epoch=0, rng_state=None) -> TrainResult:
    """Optimize model in place; returns history with best weights restored.

    adam/start_epoch/rng_state let a run resume from a checkpoint: epoch
    numbering continues and the shuffling stream picks up where it left off.
    """
    cfg.validate()
    if not train_scenes:
        raise ConfigError("empty training pool")
    rng = np.random.default_rng(cfg.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if adam is None:
        adam = AdamState.for_model(model)
    records = []
    for scene in train_scenes:
        spectra, phase = scene_features(scene, model.cfg.input_bins)
        records.append((spectra, phase, scene.clean.samples,
                        scene.meta.get("seed")))

    result = TrainResult(model=model)
    result.epochs_run = start_epoch
    best_params = None
    since_best = 0
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        order = rng.permutation(len(records))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [records[i] for i in order[lo: lo + cfg.batch_size]]
            tape = Tape()
            with tape:
                loss = _batch_mean_loss(model, batch)
            if not np.isfinite(loss.data):
                seeds = [r[3] for r in batch]
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch} on scene seeds {seeds}")
            tape.backward(loss)
            params = [t for _, t in model.named_params()]
            clip_gradients(params, cfg.grad_clip_norm)
            adam.apply(model, cfg.learning_rate)
            for t in params:
                t.grad = None
            epoch_losses.append(float(loss.data))

        train_loss = float(np.mean(epoch_losses))
        if val_scenes:
            score = evaluate_si_sdr(model, val_scenes)
            val_sdr = score
        else:
            score = -train_loss
            val_sdr = float("nan")
        result.history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_sdr": val_sdr})
        result.epochs_run = epoch
        if log:
            log(f"epoch {epoch:3d}  loss {train_loss:+.5f}  val {val_sdr:+.2f} dB")
        if score > result.best_val_sdr:
            result.best_val_sdr = score
            result.best_epoch = epoch
            best_params = {n: t.data.copy() for n, t in model.named_params()}
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience > 0 and since_best >= cfg.early_stop_patience:
                break

    if best_params is not None:
        for name, t in model.named_params():
            t.data = best_params[name]
    if history_path:
        write_history_csv(history_path, result.history)
    if checkpoint_path:
        ckpt = make_checkpoint(model, cfg, adam, result.epochs_run,
                               result.best_val_sdr,
                               rng.bit_generator.state)
        save_checkpoint(checkpoint_path, ckpt)
    return result


def write_history_csv(path, history) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_sdr\n")
        for row in history:
            f.write(f"{row['epoch']},{row['train_loss']:.12g},"
                    f"{row['val_sdr']:.12g}\n")


# ---------------------------------------------------------------------------
# checkpointing

@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    best_val_sdr: float
    adam_step: int
    rng_state: dict
    arrays: dict  # name -> float64 ndarray


def make_checkpoint(model: Model, train_cfg: TrainConfig, adam: AdamState,
                    epoch: int, best_val_sdr: float, rng_state: dict) -> Checkpoint:
    arrays = {name: t.data.copy() for name, t in model.named_params()}
    for name, arr in adam.m.items():
        arrays[f"adam.m:{name}"] = arr.copy()
    for name, arr in adam.v.items():
        arrays[f"adam.v:{name}"] = arr.copy()
    return Checkpoint(CHECKPOINT_VERSION, model.cfg, train_cfg, epoch,
                      best_val_sdr, adam.step_count, rng_state, arrays)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = json.dumps({
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "epoch": ckpt.epoch,
        "best_val_sdr": ckpt.best_val_sdr,
        "adam_step": ckpt.adam_step,
        "rng_state": ckpt.rng_state,
    }, sort_keys=True).encode()
    payload = bytearray()
    payload += struct.pack("<I", ckpt.version)
    payload += struct.pack("<I", len(header)) + header
    payload += struct.pack("<I", len(ckpt.arrays))
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        nb = name.encode()
        payload += struct.pack("<H", len(nb)) + nb
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.tobytes()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated file")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _config_from_dict(cls, d, path, label):
    valid = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(d) - valid
    if unknown:
        raise CheckpointError(f"{path}: unknown {label} fields {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise CheckpointError(f"{path}: incomplete {label} ({e})") from e


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    payload, (stored_crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    r = _Reader(payload, path)
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    (header_len,) = r.unpack("<I")
    try:
        header = json.loads(r.take(header_len).decode())
    except ValueError as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    (n_arrays,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(count * 8), dtype="<f8")
        arrays[name] = data.reshape(shape).astype(np.float64)
    model_cfg = _config_from_dict(ModelConfig, header["model_config"],
                                  path, "model config")
    train_cfg = _config_from_dict(TrainConfig, header["train_config"],
                                  path, "train config")
    return Checkpoint(version, model_cfg, train_cfg, header["epoch"],
                      header["best_val_sdr"], header["adam_step"],
                      header["rng_state"], arrays)


def restore_model(ckpt: Checkpoint) -> Model:
    """Build the model named by the checkpoint and load its parameters."""
    model = Model(ckpt.model_config)
    for name, t in model.named_params():
        if name not in ckpt.arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        arr = ckpt.arrays[name]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {arr.shape}, "
                f"model expects {t.data.shape}")
        t.data = arr.copy()
    return model


def restore_adam(ckpt: Checkpoint, model: Model) -> AdamState:
    adam = AdamState.for_model(model)
    adam.step_count = ckpt.adam_step
    for name in adam.m:
        mk, vk = f"adam.m:{name}", f"adam.v:{name}"
        if mk not in ckpt.arrays or vk not in ckpt.arrays:
            raise CheckpointError(f"checkpoint missing optimizer state for {name!r}")
        adam.m[name] = ckpt.arrays[mk].copy()
        adam.v[name] = ckpt.arrays[vk].copy()
    return adam
