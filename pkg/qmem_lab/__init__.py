"""Measurement-error mitigation for small simulated quantum devices.

Methods: linear inversion of a calibration matrix (``li``), a full-joint
neural network, and conditional-independence networks with optional transfer
learning between structurally identical leaves (``ci``).
"""

__version__ = '0.1.0'
