"""Desk-scale immersive-video benchmark: shared atlas transport with two
decoder-side synthesis pipelines (cost-volume depth + DIBR, and feed-forward
Gaussian splat prediction) plus rate-distortion instrumentation."""

__version__ = "0.1.0"
