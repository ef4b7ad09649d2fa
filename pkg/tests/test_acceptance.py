"""End-to-end acceptance checks: gradient coverage, exact structural
identities, reconstruction accuracy, protocol exactness, trained trend
reproduction at desk scale, and artifact determinism.

The two trained fixtures (dynamic and static) dominate the runtime; every
other check runs in seconds.
"""

import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from mvdenoise import cli, dsp, experiments, gradcheck, models, objectives, \
    scenegen, trainer
from mvdenoise.errors import CheckpointError
from mvdenoise.numcore import Tape, Tensor

# desk-scale recipe shared by the trained fixtures
DESK_MODEL = dict(input_bins=129, front_dim=128, hidden=128,
                  cell_tag="gru", input_scale=0.2)
DESK_TRAIN_COUNT = 100
DESK_VAL_COUNT = 20
DESK_LR = 3e-3
# the serpentine model converges far slower than the averaging baseline
# (which plateaus and then oscillates by epoch ~10), so each model trains
# for its own calibrated budget; best-validation weights are restored
DESK_EPOCHS = {("dynamic", "mvn2d"): 24,
               ("dynamic", "avg_rnn"): 12,
               ("static", "mvn2d"): 12}
DYNAMIC_BUDGET_S = 1800.0


def _desk_pool(scenario, count, base_seed):
    return experiments.scene_pool(scenario, count, 5, base_seed=base_seed)


def _train_desk(variant, scenario, seed):
    cfg = models.ModelConfig(variant=variant, **DESK_MODEL)
    model = models.build_model(cfg, seed=seed)
    tcfg = trainer.TrainConfig(epochs=DESK_EPOCHS[(scenario, variant)],
                               batch_size=4, learning_rate=DESK_LR, seed=seed,
                               channels_k_train=5, early_stop_patience=0)
    train_scenes = _desk_pool(scenario, DESK_TRAIN_COUNT, base_seed=100)
    val_scenes = _desk_pool(scenario, DESK_VAL_COUNT, base_seed=5000)
    trainer.train(model, tcfg, train_scenes, val_scenes)
    return model


# ---------------------------------------------------------------------------
# gradient suite

def test_gradient_suite_full_registry_under_budget():
    t0 = time.perf_counter()
    rows, ok = gradcheck.run_registry(seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(err for _, err, _, _ in rows)
    assert ok, [name for name, _, _, passed in rows if not passed]
    assert worst < 1e-4
    assert elapsed < 120.0
    names = {name for name, _, _, _ in rows}
    for required in ("cells.plain_step", "cells.gru_step",
                     "objectives.sdr_loss", "dsp.recombine",
                     "models.avg_rnn", "models.mvn1d", "models.mvn2d",
                     "models.mvn2d_bidir"):
        assert required in names


# ---------------------------------------------------------------------------
# reduction identities (bit-exact, shared weights)

def _random_spectra(rng, k, t, f):
    data = rng.uniform(0.0, 3.0, size=(k, t, f))
    return models.MultiChannelSpectra(data, list(range(k)))


def test_reduction_identities_bit_exact():
    cfg = models.ModelConfig(input_bins=7, front_dim=6, hidden=5,
                             variant="mvn2d")
    model = models.build_model(cfg, seed=3)
    rng = np.random.default_rng(0)

    one = _random_spectra(rng, 1, 11, 7)
    assert np.array_equal(models.forward_mvn2d(model, one).data,
                          models.forward_avg_rnn(model, one).data)

    frame = _random_spectra(rng, 4, 1, 7)
    assert np.array_equal(models.forward_mvn2d(model, frame).data,
                          models.forward_mvn1d(model, frame).data)

    chan = rng.uniform(0.0, 3.0, size=(1, 9, 7))
    doubled = models.MultiChannelSpectra(
        np.concatenate([chan, chan], axis=0), [0, 1])
    single = models.MultiChannelSpectra(chan, [0])
    assert np.array_equal(models.forward_avg_rnn(model, doubled).data,
                          models.forward_avg_rnn(model, single).data)


# ---------------------------------------------------------------------------
# reconstruction and recombination

def test_istft_stft_interior_error_on_100_signals():
    rng = np.random.default_rng(7)
    frame, hop = 512, 256
    for _ in range(100):
        x = rng.standard_normal(32000)
        wave = dsp.Waveform(x, 16000)
        back = dsp.istft(dsp.stft(wave, frame, hop))
        core = slice(frame, x.size - frame)
        err = np.linalg.norm(back.samples[core] - x[core]) \
            / np.linalg.norm(x[core])
        assert err < 1e-6


def test_recombine_linearity():
    rng = np.random.default_rng(8)
    wave = dsp.Waveform(rng.standard_normal(4000), 16000)
    spec = dsp.stft(wave, 64, 32)
    a = rng.uniform(0.0, 2.0, spec.magnitudes.shape)
    b = rng.uniform(0.0, 2.0, spec.magnitudes.shape)
    ya = dsp.recombine(Tensor(a), spec).data
    yb = dsp.recombine(Tensor(b), spec).data
    yab = dsp.recombine(Tensor(a + 3.0 * b), spec).data
    assert np.max(np.abs(yab - (ya + 3.0 * yb))) < 1e-10


# ---------------------------------------------------------------------------
# loss and metric exactness

def test_loss_and_metric_exactness():
    rng = np.random.default_rng(9)
    y = rng.standard_normal(257)
    x = rng.standard_normal(257)

    base = objectives.sdr_loss(Tensor(x.copy()), y).data
    for c in (0.5, 2.0, 8.0):
        scaled = objectives.sdr_loss(Tensor(c * x), y).data
        assert abs(scaled - base) < 1e-9 * abs(base)

    self_loss = objectives.sdr_loss(Tensor(y.copy()), y).data
    assert abs(self_loss + float(y @ y)) < 1e-9 * float(y @ y)

    ref = objectives.si_sdr(x, y).value
    for c in (0.25, 4.0):
        assert abs(objectives.si_sdr(c * x, y).value - ref) < 1e-9

    clean = scenegen.synth_source("tonal", 0.5, seed=1)
    noise = scenegen.synth_source("noise_band", 0.5, seed=2)
    for target_db in (-7.0, 0.0, 12.0):
        mixed = scenegen.mix_at_snr(clean, noise, target_db)
        resid = mixed.samples - clean.samples
        got = 10.0 * np.log10(np.sum(clean.samples ** 2)
                              / np.sum(resid ** 2))
        assert abs(got - target_db) < 1e-9


# ---------------------------------------------------------------------------
# scene protocols

def test_ladder_spans_exact():
    six = scenegen.ladder_snrs(6, "increasing")
    assert six[0] == -5.0 and six[-1] == -3.0
    thirty = scenegen.ladder_snrs(30, "increasing")
    assert thirty[0] == -5.0 and thirty[-1] == 5.0
    assert np.array_equal(np.sort(scenegen.ladder_snrs(30, "decreasing")),
                          np.sort(thirty))


def test_dynamic_scene_mean_snr_is_zero_db():
    for seed in (0, 1, 2):
        scene = scenegen.make_scene("dynamic", 6, seed=seed)
        clean = scene.clean.samples
        per_channel = []
        for ch in scene.channels:
            noise = ch.samples - clean
            per_channel.append(10.0 * np.log10(np.sum(clean ** 2)
                                               / np.sum(noise ** 2)))
        assert abs(float(np.mean(per_channel))) < 0.01


# ---------------------------------------------------------------------------
# dynamic desk-scale trends

@pytest.fixture(scope="session")
def dynamic_desk():
    t0 = time.perf_counter()
    mvn = _train_desk("mvn2d", "dynamic", seed=0)
    avg = _train_desk("avg_rnn", "dynamic", seed=1)
    rows = experiments.dynamic_sweep([("mvn2d", mvn), ("avg_rnn", avg)],
                                     k_values=range(3, 11),
                                     seeds=experiments.validation_seeds())
    elapsed = time.perf_counter() - t0
    curves = {}
    for row in rows:
        curves.setdefault(row.model_tag, {})[row.k] = row.mean_sdr_db
    return curves, elapsed


def test_dynamic_trend_more_channels_help(dynamic_desk):
    curves, _ = dynamic_desk
    assert curves["mvn2d"][10] > curves["mvn2d"][5]


def test_dynamic_trend_mvn_beats_averaging(dynamic_desk):
    curves, _ = dynamic_desk
    for k in range(3, 11):
        assert curves["mvn2d"][k] > curves["avg_rnn"][k], k


def test_dynamic_trend_averaging_flat(dynamic_desk):
    curves, _ = dynamic_desk
    avg = [curves["avg_rnn"][k] for k in range(3, 11)]
    assert max(avg) - min(avg) < 1.5


def test_dynamic_desk_fits_cpu_budget(dynamic_desk):
    _, elapsed = dynamic_desk
    assert elapsed <= DYNAMIC_BUDGET_S


# ---------------------------------------------------------------------------
# static desk-scale trends

@pytest.fixture(scope="session")
def static_desk():
    model = _train_desk("mvn2d", "static", seed=0)
    rows = experiments.static_sweep(model, "mvn2d",
                                    k_values=range(1, 31),
                                    seeds=experiments.validation_seeds())
    curves = {}
    for row in rows:
        curves.setdefault(row.scenario, {})[row.k] = row.mean_sdr_db
    return curves


def test_static_order_gap_small_at_k30(static_desk):
    gap = abs(static_desk["static_inc"][30] - static_desk["static_dec"][30])
    assert gap < 0.5


def test_static_increasing_curve_rises_with_k(static_desk):
    ks = list(range(1, 31))
    sdrs = [static_desk["static_inc"][k] for k in ks]
    rho = spearmanr(ks, sdrs).statistic
    assert rho > 0.8


def test_static_decreasing_curve_retains_early_peak(static_desk):
    # adding ever-noisier channels must not erode what the clean ones gave
    assert static_desk["static_dec"][30] >= static_desk["static_dec"][3] - 1.0


# ---------------------------------------------------------------------------
# channel-count generalization is structural; checkpoint roundtrip

@pytest.fixture(scope="session")
def toy_k5_checkpoint(tmp_path_factory):
    """A quickly trained k=5 checkpoint at toy dims."""
    path = tmp_path_factory.mktemp("ckpt") / "k5.mvnc"
    cfg = models.ModelConfig(input_bins=17, front_dim=11, hidden=10,
                             variant="mvn2d")
    model = models.build_model(cfg, seed=0)
    tcfg = trainer.TrainConfig(epochs=1, batch_size=4, learning_rate=1e-3,
                               seed=0, channels_k_train=5)
    pool = experiments.scene_pool("dynamic", 8, 5, base_seed=100,
                                  duration_s=0.05)
    trainer.train(model, tcfg, pool, [], checkpoint_path=path)
    return path


def test_k5_checkpoint_generalizes_across_channel_counts(toy_k5_checkpoint):
    ckpt = trainer.load_checkpoint(toy_k5_checkpoint)
    assert ckpt.train_config.channels_k_train == 5
    model = trainer.restore_model(ckpt)
    tested_k = (1, 2, 12, 30)
    frame_counts = set()
    for k in tested_k:
        scene = scenegen.make_scene("dynamic", k, seed=900, duration_s=0.2)
        est = trainer.denoise_scene(model, scene)
        assert np.all(np.isfinite(est))
        assert est.shape == scene.clean.samples.shape
        spectra, _ = trainer.scene_features(scene, ckpt.model_config.input_bins)
        frame_counts.add(spectra.data.shape[1])
    # shape audit: parameters carry no trace of channel count or frame count
    forbidden = set(tested_k) | frame_counts
    for name, arr in ckpt.arrays.items():
        for extent in arr.shape:
            assert extent not in forbidden, (name, arr.shape)


def test_checkpoint_roundtrip_bit_exact(toy_k5_checkpoint, tmp_path):
    ckpt = trainer.load_checkpoint(toy_k5_checkpoint)
    model = trainer.restore_model(ckpt)
    resaved = tmp_path / "again.mvnc"
    trainer.save_checkpoint(resaved, ckpt)
    again = trainer.load_checkpoint(resaved)
    for name, arr in ckpt.arrays.items():
        assert np.array_equal(arr, again.arrays[name])
    spectra = models.MultiChannelSpectra(
        np.random.default_rng(4).uniform(0, 2, size=(3, 4, 17)), [0, 1, 2])
    out1 = model.forward(spectra).data
    out2 = trainer.restore_model(again).forward(spectra).data
    assert np.array_equal(out1, out2)


def test_corrupted_checkpoint_rejected(toy_k5_checkpoint, tmp_path):
    raw = bytearray(toy_k5_checkpoint.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    bad = tmp_path / "bad.mvnc"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        trainer.load_checkpoint(bad)
    truncated = tmp_path / "short.mvnc"
    truncated.write_bytes(toy_k5_checkpoint.read_bytes()[:-9])
    with pytest.raises(CheckpointError):
        trainer.load_checkpoint(truncated)


# ---------------------------------------------------------------------------
# determinism of training and sweep artifacts

def test_training_and_sweep_outputs_byte_identical(tmp_path):
    config = {"seed": 11,
              "model": {"input_bins": 9, "front_dim": 6, "hidden": 5},
              "train": {"epochs": 2, "batch_size": 4, "learning_rate": 1e-3},
              "scene": {"scenario": "dynamic", "k": 2, "count": 6,
                        "duration_s": 0.05, "val_count": 2}}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    runs = [tmp_path / "r1", tmp_path / "r2"]
    for out in runs:
        assert cli.main(["train", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
    assert (runs[0] / "history.csv").read_bytes() == \
        (runs[1] / "history.csv").read_bytes()
    assert (runs[0] / "checkpoint.mvnc").read_bytes() == \
        (runs[1] / "checkpoint.mvnc").read_bytes()

    sweeps = [tmp_path / "s1", tmp_path / "s2"]
    ckpt_map = json.dumps({"m": str(runs[0] / "checkpoint.mvnc")})
    for out in sweeps:
        assert cli.main(["sweep", "--config", str(cfg_path),
                         "--out", str(out),
                         "--set", f"sweep.checkpoints={ckpt_map}",
                         "--set", "sweep.k_values=[1,2,4]",
                         "--set", "sweep.val_count=3",
                         "--set", "sweep.duration_s=0.05"]) == 0
    assert (sweeps[0] / "results.csv").read_bytes() == \
        (sweeps[1] / "results.csv").read_bytes()
