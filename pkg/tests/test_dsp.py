import numpy as np
import pytest

from mvdenoise import dsp, gradcheck
from mvdenoise import numcore as nc
from mvdenoise.errors import ConfigError, DimensionError, InputError
from mvdenoise.numcore import Tape, Tensor

SR = 16000


def _wave(samples):
    return dsp.Waveform(np.asarray(samples, dtype=np.float64), SR)


def test_zero_signal_gives_zero_magnitudes():
    s = dsp.stft(_wave(np.zeros(4096)), 1024, 512)
    assert np.array_equal(s.magnitudes, np.zeros_like(s.magnitudes))


def test_sine_energy_concentrates_at_its_bin():
    # the Hann window spreads an exact-bin sine over k-1, k, k+1 with
    # amplitude weights 1/4, 1/2, 1/4, so the concentration check covers
    # that 3-bin neighborhood; the peak itself must sit at bin k
    frame = 1024
    k = 37
    n = np.arange(8192)
    x = np.sin(2 * np.pi * k * n / frame)
    s = dsp.stft(_wave(x), frame, frame // 2)
    for t in range(2, s.num_frames - 2):
        e = s.magnitudes[t] ** 2
        assert int(np.argmax(e)) == k
        assert e[k - 1: k + 2].sum() / e.sum() >= 0.99
        assert abs(e[k] / e.sum() - 2.0 / 3.0) < 1e-6  # exact Hann split


def test_dc_signal_bin_zero_equals_window_sum():
    frame = 512
    s = dsp.stft(_wave(np.ones(2048)), frame, frame // 2)
    wsum = dsp.hann_window(frame).sum()
    assert abs(wsum - frame / 2) < 1e-9  # periodic Hann sums to N/2
    assert abs(s.magnitudes[2, 0] - wsum) < 1e-9


def test_frame_count_follows_padding_rule():
    frame, hop = 256, 128
    for n in [256, 257, 300, 512, 1000]:
        s = dsp.stft(_wave(np.random.default_rng(n).standard_normal(n)), frame, hop)
        padded = n if (n - frame) % hop == 0 else n + hop - (n - frame) % hop
        assert s.num_frames == (padded - frame) // hop + 1
        assert s.num_bins == frame // 2 + 1
        assert s.num_samples == n


def test_magnitudes_nonnegative_phases_in_range():
    rng = np.random.default_rng(3)
    s = dsp.stft(_wave(rng.standard_normal(3000)), 256, 128)
    assert np.all(s.magnitudes >= 0)
    assert np.all(s.phases > -np.pi)
    assert np.all(s.phases <= np.pi)


def test_stft_input_validation():
    with pytest.raises(InputError):
        dsp.stft(_wave(np.zeros(0)), 256, 128)
    with pytest.raises(InputError):
        dsp.stft(_wave(np.zeros(100)), 256, 128)
    with pytest.raises(ConfigError):
        dsp.stft(_wave(np.zeros(1000)), 300, 128)
    with pytest.raises(ConfigError):
        dsp.stft(_wave(np.zeros(1000)), 256, 0)
    with pytest.raises(ConfigError):
        dsp.stft(_wave(np.zeros(1000)), 256, 512)
    with pytest.raises(InputError):
        dsp.Waveform(np.array([1.0, np.nan]), SR)


def _interior_rel_error(x, y, frame):
    half = frame // 2
    a = x[half:-half]
    b = y[half:-half]
    return np.linalg.norm(a - b) / np.linalg.norm(a)


@pytest.mark.parametrize("n", [2048, 3000, 32000])
def test_roundtrip_interior(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n)
    frame = 1024 if n >= 2048 else 256
    s = dsp.stft(_wave(x), frame, frame // 2)
    y = dsp.istft(s)
    assert y.samples.size == n
    assert y.sample_rate == SR
    assert _interior_rel_error(x, y.samples, frame) < 1e-6


def test_zero_spectrogram_synthesizes_silence():
    s = dsp.stft(_wave(np.zeros(2048)), 256, 128)
    y = dsp.istft(s)
    assert np.array_equal(y.samples, np.zeros(2048))


def test_istft_requires_half_overlap():
    s = dsp.stft(_wave(np.random.default_rng(0).standard_normal(2048)), 256, 64)
    with pytest.raises(ConfigError):
        dsp.istft(s)


def test_istft_linearity_in_complex_domain():
    rng = np.random.default_rng(9)
    frame = 256
    x1 = rng.standard_normal(2048)
    x2 = rng.standard_normal(2048)
    s1 = dsp.stft(_wave(x1), frame, frame // 2)
    s2 = dsp.stft(_wave(x2), frame, frame // 2)
    a, b = 0.7, -1.3
    combo = (a * s1.magnitudes * np.exp(1j * s1.phases)
             + b * s2.magnitudes * np.exp(1j * s2.phases))
    s3 = dsp.Spectrogram(np.abs(combo), np.angle(combo), frame, frame // 2,
                         s1.num_samples, SR)
    lhs = dsp.istft(s3).samples
    rhs = a * dsp.istft(s1).samples + b * dsp.istft(s2).samples
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_parseval_per_frame():
    rng = np.random.default_rng(11)
    frame = 256
    x = rng.standard_normal(2048)
    s = dsp.stft(_wave(x), frame, frame // 2)
    window = dsp.hann_window(frame)
    mult = np.full(s.num_bins, 2.0)
    mult[0] = mult[-1] = 1.0
    for t in [0, 3, 7]:
        seg = x[t * 128: t * 128 + frame] * window
        spectral = (mult * s.magnitudes[t] ** 2).sum() / frame
        assert abs(spectral - (seg ** 2).sum()) < 1e-9


def test_recombine_identity_matches_istft():
    rng = np.random.default_rng(13)
    x = rng.standard_normal(2048)
    s = dsp.stft(_wave(x), 256, 128)
    out = dsp.recombine(Tensor(s.magnitudes.copy()), s)
    assert np.array_equal(out.data, dsp.istft(s).samples)
    assert _interior_rel_error(x, out.data, 256) < 1e-6


def test_recombine_zero_and_doubling():
    rng = np.random.default_rng(14)
    x = rng.standard_normal(2048)
    s = dsp.stft(_wave(x), 256, 128)
    silent = dsp.recombine(Tensor(np.zeros_like(s.magnitudes)), s)
    assert np.array_equal(silent.data, np.zeros(2048))
    doubled = dsp.recombine(Tensor(2.0 * s.magnitudes), s)
    assert np.max(np.abs(doubled.data - 2.0 * dsp.istft(s).samples)) < 1e-10


def test_recombine_shape_mismatch():
    s = dsp.stft(_wave(np.zeros(2048)), 256, 128)
    with pytest.raises(DimensionError):
        dsp.recombine(Tensor(np.zeros((3, 5))), s)


def test_recombine_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    frame, hop = 16, 8
    x = rng.standard_normal(frame + 5 * hop)
    s = dsp.stft(_wave(x), frame, hop)
    d = rng.standard_normal(len(x))
    mags = np.abs(rng.standard_normal(s.magnitudes.shape)) + 0.05

    def build(ts):
        out = dsp.recombine(ts["m"], s)
        return nc.dot(out, Tensor(d))

    assert gradcheck.check_grads(build, {"m": mags}) < 1e-4


def test_recombine_gradient_accumulates_on_tape():
    rng = np.random.default_rng(19)
    x = rng.standard_normal(48)
    s = dsp.stft(_wave(x), 16, 8)
    m = Tensor(s.magnitudes.copy())
    tape = Tape()
    with tape:
        out = dsp.recombine(m, s)
        loss = nc.dot(out, out)
    tape.backward(loss)
    assert m.grad is not None
    assert m.grad.shape == m.data.shape
    assert np.all(np.isfinite(m.grad))


def test_wav_roundtrip(tmp_path):
    rng = np.random.default_rng(23)
    x = np.clip(rng.standard_normal(5000) * 0.2, -1.0, 0.99)
    path = tmp_path / "clip.wav"
    dsp.write_wav(path, dsp.Waveform(x, 8000))
    back = dsp.read_wav(path)
    assert back.sample_rate == 8000
    assert back.samples.size == 5000
    assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768.0


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a wave file at all, definitely")
    with pytest.raises(InputError):
        dsp.read_wav(path)
