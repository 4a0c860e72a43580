"""Experiment harness: configs, evaluation protocols and the ``bipedlab`` CLI.

Kept import-light so the CLI can apply thread settings before numpy loads;
import :mod:`.protocols`, :mod:`.config` or :mod:`.cli` directly.
"""
