"""vqmat: two-branch neural reflectance decomposition with discrete materials.

A desk-scale inverse renderer over oracle geometry: a continuous branch
predicts per-point BRDF attributes, a vector-quantized discrete branch
clusters them into a material vocabulary with automatic length selection,
and an edit service supports material replacement and relighting.
"""

__version__ = "0.1.0"
