"""Class-incremental learning on long-tailed instance features.

Modules: ``dataset`` (index, COCO ingest, synthetic generator), ``partition``
(class groups), ``replay`` (per-phase plans), ``model`` (adapter, cosine
classifier, losses), ``mwg`` (meta weight generator), ``trainer`` (the
phase loop), ``metrics`` (bucketed evaluation and reports), ``checkpoint``
and ``cli``.
"""
from __future__ import annotations

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
