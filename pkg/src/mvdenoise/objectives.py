"""Training loss and evaluation metric on time-domain signals.

The training loss rewards energy aligned with the target direction:

    loss(x, y) = -(x.y)^2 / (x.x + 1e-12)

It is scale invariant in x (any nonzero rescaling of the output scores the
same), bounded in [-|y|^2, 0], and hits the bound only when x is parallel
to y.  The epsilon keeps silent outputs finite.

Evaluation uses scale-invariant SDR: project the estimate onto the
reference, compare projected energy to residual energy in dB.  Values are
clamped to +/-60 dB so perfect or hopeless reconstructions stay finite.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .errors import DimensionError, InputError
from .numcore import Tensor

SDR_CLAMP_DB = 60.0
_EPS = 1e-12


def sdr_loss(x: Tensor, y) -> Tensor:
    """Scalar tape loss -(x.y)^2/(x.x + eps); gradient flows into x."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if x.data.shape != yd.shape or x.data.ndim != 1:
        raise DimensionError(
            f"loss needs equal-length vectors, got {x.data.shape} vs {yd.shape}")
    aligned = nc.dot(x, Tensor(yd))
    energy = nc.dot(x, x)
    num = nc.mul(aligned, aligned)
    den = nc.add(energy, Tensor(np.asarray(_EPS)))
    return nc.scale(nc.div(num, den), -1.0)


class SdrScore:
    """A scale-invariant SDR value in decibels."""

    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)

    def __repr__(self):
        return f"SdrScore({self.value:.3f} dB)"


def si_sdr(estimate, reference) -> SdrScore:
    """Scale-invariant SDR of estimate against reference, clamped to +/-60 dB."""
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise DimensionError(
            f"metric needs equal-length vectors, got {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy <= 0.0:
        raise InputError("reference signal has zero energy")
    s = (float(est @ ref) / ref_energy) * ref
    target_energy = float(s @ s)
    residual = est - s
    residual_energy = float(residual @ residual)
    if target_energy <= 0.0:
        return SdrScore(-SDR_CLAMP_DB)
    if residual_energy <= 0.0:
        return SdrScore(SDR_CLAMP_DB)
    value = 10.0 * np.log10(target_energy / residual_energy)
    return SdrScore(float(np.clip(value, -SDR_CLAMP_DB, SDR_CLAMP_DB)))
