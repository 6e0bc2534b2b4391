"""Fused discriminator/generator propagation for GAN training.

A small tape-based reverse-mode autodiff engine over numpy, the common GAN
losses with their gradient scaling factors, MLP networks with per-sample
parameter-gradient scaling, four training schedules (alternating, two-pass
simultaneous, fused, inverted fused) and a throughput harness.
"""

__version__ = "0.1.0"
