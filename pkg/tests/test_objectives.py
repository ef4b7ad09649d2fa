import numpy as np
import pytest

from mvdenoise import gradcheck, objectives
from mvdenoise.errors import DimensionError, InputError
from mvdenoise.numcore import Tape, Tensor


def _loss_value(x, y):
    return float(objectives.sdr_loss(Tensor(np.asarray(x, float)),
                                     np.asarray(y, float)).data)


def test_loss_aligned_unit_vectors():
    # x = y = [1, 0]: -(1)^2/(1 + eps) = -1 up to the epsilon guard
    assert abs(_loss_value([1.0, 0.0], [1.0, 0.0]) + 1.0) < 1e-11


def test_loss_orthogonal_vectors():
    assert _loss_value([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_loss_scale_invariant_in_output():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(32)
    y = rng.standard_normal(32)
    base = _loss_value(x, y)
    energy = float(x @ x)
    for c in [2.0, -3.0, 1e-3, 137.0]:
        # c^2 cancels between (x.y)^2 and x.x exactly; the eps guard shifts
        # the value by about |base| * eps / (c^2 * x.x), so bound by that
        drift = abs(base) * 1e-12 / (c * c * energy)
        assert abs(_loss_value(c * x, y) - base) <= 2.0 * drift + 1e-12


def test_loss_bounds_and_parallel_case():
    rng = np.random.default_rng(6)
    for _ in range(50):
        x = rng.standard_normal(16)
        y = rng.standard_normal(16)
        v = _loss_value(x, y)
        assert -float(y @ y) - 1e-9 <= v <= 0.0
    y = rng.standard_normal(16)
    assert abs(_loss_value(2.5 * y, y) + float(y @ y)) < 1e-9


def test_loss_silent_output_is_finite():
    v = _loss_value(np.zeros(8), np.ones(8))
    assert v == 0.0


def test_loss_length_mismatch():
    with pytest.raises(DimensionError):
        objectives.sdr_loss(Tensor(np.zeros(3)), np.zeros(4))


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(4, 65))
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        err = gradcheck.check_grads(
            lambda ts: objectives.sdr_loss(ts["x"], y), {"x": x})
        assert err < 1e-4


def test_loss_gradient_direction_improves_alignment():
    # one explicit descent step must not decrease |cos| between x and y
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal(24)
    y = rng.standard_normal(24)
    xt = Tensor(x0.copy())
    tape = Tape()
    with tape:
        loss = objectives.sdr_loss(xt, y)
    tape.backward(loss)
    x1 = x0 - 1e-3 * xt.grad

    def cos2(a):
        return float(a @ y) ** 2 / (float(a @ a) * float(y @ y))

    assert cos2(x1) >= cos2(x0)


def test_metric_perfect_and_scaled_reconstruction():
    rng = np.random.default_rng(9)
    ref = rng.standard_normal(100)
    assert objectives.si_sdr(ref, ref).value == 60.0
    assert objectives.si_sdr(3.0 * ref, ref).value == 60.0
    assert objectives.si_sdr(-0.5 * ref, ref).value == 60.0


def test_metric_equal_energy_orthogonal_noise_is_zero_db():
    ref = np.zeros(64)
    ref[0] = 2.0
    noise = np.zeros(64)
    noise[1] = 2.0  # orthogonal, equal energy
    score = objectives.si_sdr(ref + noise, ref)
    assert abs(score.value) < 1e-9


def test_metric_known_snr_levels():
    # orthogonal noise at 1/10th the energy puts the score at exactly 10 dB
    ref = np.zeros(10)
    ref[0] = 1.0
    noise = np.zeros(10)
    noise[1] = np.sqrt(0.1)
    assert abs(objectives.si_sdr(ref + noise, ref).value - 10.0) < 1e-9


def test_metric_scale_invariance_random():
    rng = np.random.default_rng(10)
    est = rng.standard_normal(50)
    ref = rng.standard_normal(50)
    base = objectives.si_sdr(est, ref).value
    for c in [0.1, -2.0, 40.0]:
        assert abs(objectives.si_sdr(c * est, ref).value - base) < 1e-9


def test_metric_validation():
    with pytest.raises(InputError):
        objectives.si_sdr(np.ones(5), np.zeros(5))
    with pytest.raises(DimensionError):
        objectives.si_sdr(np.ones(5), np.ones(6))


def test_metric_zero_estimate_clamps_low():
    ref = np.ones(8)
    assert objectives.si_sdr(np.zeros(8), ref).value == -60.0
