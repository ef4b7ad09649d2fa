"""Evaluation sweeps: order sensitivity on SNR ladders, channel-count
scaling with moving noise, and the CSV contract for their results.

Scene seeds are shared across every k (and both ladder orders) inside a
sweep, so curves differ only through the channel count.  Dynamic sweeps
additionally reuse one master microphone layout per scene seed, drawn at
the largest k and truncated, so adding microphones extends the array
instead of redrawing it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import scenegen, trainer
from .errors import InputError
from .objectives import si_sdr

DEFAULT_STATIC_KS = tuple(range(1, 31))
DEFAULT_DYNAMIC_KS = tuple(range(1, 16))
DEFAULT_VAL_COUNT = 20
DEFAULT_VAL_BASE_SEED = 5000
_GEOMETRY_STREAM = 271828  # distinguishes the master-layout draw per seed


@dataclass
class SweepResult:
    scenario: str   # static_inc | static_dec | dynamic
    model_tag: str
    k: int
    mean_sdr_db: float
    std_sdr_db: float
    n_scenes: int


def validation_seeds(base_seed: int = DEFAULT_VAL_BASE_SEED,
                     count: int = DEFAULT_VAL_COUNT):
    return [base_seed + i for i in range(count)]


def _pmap(fn, items, threads):
    # scene work is seed-addressed and side-effect free, so a thread pool
    # changes wall time only; pool.map keeps the output order
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def scene_pool(scenario: str, count: int, k: int, base_seed: int,
               order: str = "random", duration_s=scenegen.DEFAULT_DURATION_S,
               sample_rate=scenegen.DEFAULT_SR, threads: int = 1):
    """count seeded scenes; seed of scene i is base_seed + i."""
    def build(i):
        return scenegen.make_scene(scenario, k, seed=base_seed + i,
                                   order=order, duration_s=duration_s,
                                   sample_rate=sample_rate)
    return _pmap(build, range(count), threads)


def _score_scenes(model, scenes, threads=1):
    def score(s):
        return si_sdr(trainer.denoise_scene(model, s), s.clean.samples).value
    scores = _pmap(score, scenes, threads)
    return float(np.mean(scores)), float(np.std(scores)), len(scores)


def static_sweep(model, model_tag: str, k_values=DEFAULT_STATIC_KS,
                 seeds=None, duration_s=scenegen.DEFAULT_DURATION_S,
                 sample_rate=scenegen.DEFAULT_SR, threads: int = 1):
    """Rows for both ladder orders at every k, shared scene seeds."""
    if seeds is None:
        seeds = validation_seeds()
    rows = []
    for order, tag in (("increasing", "static_inc"),
                       ("decreasing", "static_dec")):
        for k in k_values:
            def build(s, order=order, k=k):
                return scenegen.make_scene("static", k, seed=s, order=order,
                                           duration_s=duration_s,
                                           sample_rate=sample_rate)
            scenes = _pmap(build, seeds, threads)
            mean, std, n = _score_scenes(model, scenes, threads)
            rows.append(SweepResult(tag, model_tag, int(k), mean, std, n))
    return rows


def master_mic_layout(seed: int, max_k: int) -> np.ndarray:
    """The per-scene master array layout dynamic sweeps truncate per k."""
    return scenegen.draw_mic_positions(max_k, seed=[seed, _GEOMETRY_STREAM])


def dynamic_sweep(models_by_tag, k_values=DEFAULT_DYNAMIC_KS, seeds=None,
                  duration_s=scenegen.DEFAULT_DURATION_S,
                  sample_rate=scenegen.DEFAULT_SR, threads: int = 1):
    """Rows for each model at every k over shared seeds and nested layouts.

    models_by_tag: sequence of (tag, model) pairs, evaluated on identical
    scenes within each k.
    """
    models_by_tag = list(models_by_tag)
    if not models_by_tag:
        raise InputError("no models to sweep")
    if seeds is None:
        seeds = validation_seeds()
    k_values = sorted(int(k) for k in k_values)
    max_k = k_values[-1]
    masters = {s: master_mic_layout(s, max_k) for s in seeds}
    rows = []
    for k in k_values:
        def build(s, k=k):
            return scenegen.make_scene("dynamic", k, seed=s,
                                       duration_s=duration_s,
                                       sample_rate=sample_rate,
                                       mic_positions=masters[s][:k])
        scenes = _pmap(build, seeds, threads)
        for tag, model in models_by_tag:
            mean, std, n = _score_scenes(model, scenes, threads)
            rows.append(SweepResult("dynamic", tag, k, mean, std, n))
    return rows


CSV_HEADER = "scenario,model,k,mean_sdr_db,std_sdr_db,n_scenes"


def emit_csv(results, path) -> None:
    """Write rows sorted by (scenario, model, k); stable bytes for stable input."""
    if not results:
        raise InputError("no sweep results to write")
    rows = sorted(results, key=lambda r: (r.scenario, r.model_tag, r.k))
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in rows:
            f.write(f"{r.scenario},{r.model_tag},{r.k},"
                    f"{r.mean_sdr_db:.12g},{r.std_sdr_db:.12g},{r.n_scenes}\n")


def parse_csv(path):
    """Read a results file back into SweepResult rows."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise InputError(f"{path}: not a sweep results file")
    rows = []
    for ln in lines[1:]:
        scenario, model_tag, k, mean, std, n = ln.split(",")
        rows.append(SweepResult(scenario, model_tag, int(k),
                                float(mean), float(std), int(n)))
    return rows
