"""Channel-unrolled recurrent denoisers for multi-channel audio.

Recurrent networks that unroll across input channels (and optionally
channels x time in serpentine order), trained with an SDR-proxy loss on
synthetic multi-channel noisy scenes.  These models accept any number of
channels at inference, independent of the channel count used in training.
"""

__version__ = "0.1.0"
