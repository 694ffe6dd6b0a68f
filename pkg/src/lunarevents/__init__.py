"""Synthetic event-camera datasets of lunar landings.

Pipeline: optimal landing trajectories, rendered camera frames over a
procedural cratered terrain, ground-truth motion fields and emulated
event streams.
"""
__version__ = "0.1.0"
