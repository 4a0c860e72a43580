"""Desk-scale constrained-RL locomotion lab for a planar point-foot biped."""

__version__ = "0.1.0"
