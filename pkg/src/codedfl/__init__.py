"""Straggler-resilient coded matrix-vector multiplication for
device-to-device federated learning."""

__version__ = "0.1.0"
