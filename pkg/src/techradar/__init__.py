"""techradar: maps the diffusion of a technology across a firm population
by mining company websites: keyword-in-context extraction, an ensemble
text classifier with vote confidences, hierarchy-based company labeling,
and regional hotspot analytics, plus a human-in-the-loop labeling service.
"""

__version__ = "0.1.0"
