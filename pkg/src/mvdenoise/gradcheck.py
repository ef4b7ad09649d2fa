"""Central finite-difference verification of backward rules.

``check_grads`` is the workhorse: build the same scalar loss twice, once on
a tape for analytic gradients and once per perturbed coordinate for numeric
ones, and compare.  ``run_registry`` drives the named suite behind the
``gradcheck`` CLI command; every differentiable op in the package must be
listed there.
"""

from __future__ import annotations

import time

import numpy as np

from . import numcore as nc
from .numcore import Tape, Tensor

#: perturbation for central differences and the pass threshold on the
#: relative error (floored comparison, see compare_grads)
EPS = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-4


def numeric_grad(f, x0: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central finite differences of scalar-valued f at x0, coordinate by coordinate."""
    x = np.array(x0, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        fp = f(x)
        flat_x[i] = orig - eps
        fm = f(x)
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * eps)
    return g


def compare_grads(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = REL_FLOOR) -> float:
    """Max relative error; the floor makes near-zero pairs compare absolutely."""
    num = np.abs(analytic - numeric)
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((num / den).max()) if num.size else 0.0


def check_grads(build_loss, arrays: dict, eps: float = EPS,
                floor: float = REL_FLOOR) -> float:
    """Compare tape gradients of build_loss against finite differences.

    build_loss takes {name: Tensor} and returns a scalar Tensor; arrays maps
    the same names to the numpy values to differentiate at.  Returns the max
    relative error over all coordinates of all named arrays.
    """
    tensors = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in arrays.items()}
    tape = Tape()
    with tape:
        loss = build_loss(tensors)
    tape.backward(loss)

    worst = 0.0
    for name, arr in arrays.items():
        t = tensors[name]
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)

        def f(x, _name=name):
            ts = {k: Tensor(v) for k, v in arrays.items()}
            ts[_name] = Tensor(x)
            return float(build_loss(ts).data)

        numeric = numeric_grad(f, np.asarray(arr, dtype=np.float64), eps)
        worst = max(worst, compare_grads(analytic, numeric, floor))
    return worst


# ---------------------------------------------------------------------------
# named check registry

def _check_matmul(rng, trials):
    worst = 0.0
    for _ in range(trials):
        m, n, p = rng.integers(1, 5, size=3)
        a = rng.standard_normal((m, n))
        b = rng.standard_normal((n, p))
        worst = max(worst, check_grads(
            lambda ts: nc.vsum(nc.activation("tanh", nc.matmul(ts["a"], ts["b"]))),
            {"a": a, "b": b}))
        v = rng.standard_normal(n)
        worst = max(worst, check_grads(
            lambda ts: nc.vsum(nc.activation("sigmoid", nc.matmul(ts["a"], ts["v"]))),
            {"a": a, "v": v}))
    return worst


def _check_dot(rng, trials):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        worst = max(worst, check_grads(
            lambda ts: nc.mul(nc.dot(ts["a"], ts["b"]), nc.dot(ts["a"], ts["b"])),
            {"a": a, "b": b}))
    return worst


def _binary_check(op):
    def run(rng, trials):
        worst = 0.0
        for _ in range(trials):
            shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 3))))
            a = rng.standard_normal(shape)
            b = rng.standard_normal(shape)
            if op is nc.div:
                b = b + np.sign(b) + (b == 0)  # keep denominators away from 0
            worst = max(worst, check_grads(
                lambda ts: nc.vsum(nc.activation("tanh", op(ts["a"], ts["b"]))),
                {"a": a, "b": b}))
        return worst
    return run


def _check_scale(rng, trials):
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal(int(rng.integers(1, 8)))
        c = float(rng.standard_normal())
        worst = max(worst, check_grads(
            lambda ts: nc.vsum(nc.activation("tanh", nc.scale(ts["a"], c))),
            {"a": a}))
    return worst


def _check_vsum(rng, trials):
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        worst = max(worst, check_grads(
            lambda ts: nc.mul(nc.vsum(ts["a"]), nc.vsum(ts["a"])), {"a": a}))
    return worst


def _check_structural(rng, trials):
    worst = 0.0
    for _ in range(trials):
        t, f = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        a = rng.standard_normal((t, f))
        b = rng.standard_normal(f)

        def build(ts):
            rows = [nc.activation("tanh", nc.row(ts["a"], i)) for i in range(t)]
            stacked = nc.stack(rows)
            joined = nc.concat(nc.row(stacked, 0), ts["b"])
            return nc.dot(joined, joined)

        worst = max(worst, check_grads(build, {"a": a, "b": b}))
    return worst


def _activation_check(tag):
    def run(rng, trials):
        worst = 0.0
        for _ in range(trials):
            a = rng.standard_normal(int(rng.integers(1, 9))) * 3.0
            worst = max(worst, check_grads(
                lambda ts: nc.vsum(nc.activation(tag, ts["a"])), {"a": a}))
        return worst
    return run


def _check_cell(cell_tag):
    from . import cells

    def run(rng, trials):
        worst = 0.0
        for _ in range(trials):
            nin, nh = int(rng.integers(2, 6)), int(rng.integers(2, 9))
            cell = cells.make_cell(cell_tag, nin, nh)
            cells.init_cell(cell, seed=int(rng.integers(0, 2**31)))
            x = rng.standard_normal(nin)
            h = rng.standard_normal(nh)
            arrays = {name: t.data.copy() for name, t in cell.named_params()}

            def build(ts, _cell=cell, _x=x, _h=h):
                originals = dict(_cell.named_params())
                for name in arrays:
                    _cell.set_param(name, ts[name])
                try:
                    out = cells.cell_step(_cell, Tensor(_x), Tensor(_h))
                finally:
                    for name, t in originals.items():
                        _cell.set_param(name, t)
                return nc.dot(out, out)

            worst = max(worst, check_grads(build, arrays))
        return worst
    return run


def _check_sdr_loss(rng, trials):
    from . import objectives

    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 65))
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        worst = max(worst, check_grads(
            lambda ts: objectives.sdr_loss(ts["x"], y), {"x": x}))
    return worst


def _check_recombine(rng, trials):
    from . import dsp
    from . import objectives

    worst = 0.0
    for _ in range(trials):
        frame, hop = 16, 8
        wave = rng.standard_normal(frame + 3 * hop)
        spec = dsp.stft(dsp.Waveform(wave, 8000), frame, hop)
        target = rng.standard_normal(len(wave))
        mags = np.abs(rng.standard_normal(spec.magnitudes.shape)) + 0.1

        def build(ts):
            est = dsp.recombine(ts["m"], spec)
            return objectives.sdr_loss(est, target)

        worst = max(worst, check_grads(build, {"m": mags}))
    return worst


def _check_model(variant, bidirectional=False):
    from . import dsp, models, objectives

    def run(rng, trials):
        worst = 0.0
        frame, hop = 16, 8
        for _ in range(trials):
            cfg = models.ModelConfig(
                input_bins=frame // 2 + 1, front_dim=6, hidden=5,
                cell_tag="gru", variant=variant,
                bidirectional_channels=bidirectional)
            model = models.build_model(cfg, seed=int(rng.integers(0, 2**31)))
            k, t_frames = 3, 4
            n_samples = frame + (t_frames - 1) * hop
            waves = rng.standard_normal((k, n_samples))
            specs = [dsp.stft(dsp.Waveform(w, 8000), frame, hop) for w in waves]
            spectra = models.MultiChannelSpectra.from_spectrograms(specs)
            target = rng.standard_normal(n_samples)
            arrays = {name: t.data.copy() for name, t in model.named_params()}

            def build(ts, _model=model):
                originals = dict(_model.named_params())
                for name in arrays:
                    _model.set_param(name, ts[name])
                try:
                    pred = _model.forward(spectra)
                    est = dsp.recombine(pred, specs[-1])
                    return objectives.sdr_loss(est, target)
                finally:
                    for name, tns in originals.items():
                        _model.set_param(name, tns)

            worst = max(worst, check_grads(build, arrays))
        return worst
    return run


def registry():
    """Every differentiable operation, with its check driver and trial count."""
    entries = [
        ("numcore.matmul", _check_matmul, 25),
        ("numcore.dot", _check_dot, 50),
        ("numcore.add", _binary_check(nc.add), 50),
        ("numcore.sub", _binary_check(nc.sub), 50),
        ("numcore.mul", _binary_check(nc.mul), 50),
        ("numcore.div", _binary_check(nc.div), 50),
        ("numcore.scale", _check_scale, 50),
        ("numcore.vsum", _check_vsum, 50),
        ("numcore.row_stack_concat", _check_structural, 25),
        ("numcore.softplus", _activation_check("softplus"), 50),
        ("numcore.sigmoid", _activation_check("sigmoid"), 50),
        ("numcore.tanh", _activation_check("tanh"), 50),
        ("cells.plain_step", _check_cell("plain"), 12),
        ("cells.gru_step", _check_cell("gru"), 12),
        ("objectives.sdr_loss", _check_sdr_loss, 50),
        ("dsp.recombine", _check_recombine, 6),
        ("models.avg_rnn", _check_model("avg_rnn"), 2),
        ("models.mvn1d", _check_model("mvn1d"), 2),
        ("models.mvn2d", _check_model("mvn2d"), 2),
        ("models.mvn2d_bidir", _check_model("mvn2d", bidirectional=True), 2),
    ]
    return entries


def run_registry(seed: int = 0, tolerance: float = TOLERANCE):
    """Run every registered check; returns (rows, all_passed).

    Each row is (name, max_rel_error, elapsed_seconds, passed).
    """
    rows = []
    ok = True
    for name, fn, trials in registry():
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        err = fn(rng, trials)
        dt = time.perf_counter() - t0
        passed = err < tolerance
        ok = ok and passed
        rows.append((name, err, dt, passed))
    return rows, ok
