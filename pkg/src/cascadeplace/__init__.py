"""Cascade burst prediction and replica placement for fast-spreading content.

Modules: ``cascade`` (synthetic corpora), ``features``, ``neural``,
``predictor``, ``baselines``, ``placement``, ``gan``, ``evaluation``,
``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
