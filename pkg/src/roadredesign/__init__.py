"""Accident-hotspot detection, AP-feature explanation, and safe-road inpainting.

Pipeline stages, each its own module:

* :mod:`roadredesign.events` -- raw accident CSV -> validated geodetic events
* :mod:`roadredesign.hotspot` -- DBSCAN hotspot clustering + non-hotspot sampling
* :mod:`roadredesign.imagery` -- street-view capture planning, fetching, dataset manifest
* :mod:`roadredesign.classifier` -- hotspot/non-hotspot CNN (optional attention module)
* :mod:`roadredesign.apcam` -- class-activation heatmaps and AP-feature masks
* :mod:`roadredesign.maskkit` -- binary-mask algebra, scribble rasterization, adapters
* :mod:`roadredesign.inpaint` -- prompt catalog, fine-tune recipes, inpainting backends
* :mod:`roadredesign.saliency` -- salient-region detection, AP-saliency ratio, chroma edits
* :mod:`roadredesign.evalreport` -- before/after probability scoring and aggregates
* :mod:`roadredesign.gateway` -- HTTP API, CLI, job queue, workspace persistence
"""

__version__ = "0.1.0"
