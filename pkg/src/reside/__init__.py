"""Selective classification on top of a fixed binary detector.

Subpackages are imported lazily by callers (``reside.feature_store``,
``reside.clustering``, ``reside.csf``, ``reside.aggregate``,
``reside.sc_eval``, ``reside.synth``, ``reside.cli``); this module stays
import-light so the CLI can cap thread pools before numpy loads.
"""

__version__ = "0.1.0"
