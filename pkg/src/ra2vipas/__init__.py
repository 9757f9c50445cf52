"""Radio-visual active sensing for transmitter discovery.

A pan-only platform with an omnidirectional receiver, a directional receiver
and a camera searches for the one target (out of N) that carries a radio
transmitter. Detection statistics learnt with a Gaussian process are fused
with directional RSSI inside a Bayesian-optimization controller.
"""

__version__ = "0.1.0"
