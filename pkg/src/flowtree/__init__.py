"""Malicious-flow classification: pcap parsing, flow features, and a
tree-shaped network trained with class-quantity-weighted backprop."""

__version__ = "0.1.0"
