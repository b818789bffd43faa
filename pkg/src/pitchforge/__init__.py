"""pitchforge: analyze, quantize, regenerate and re-impose speech F0 contours."""

__version__ = "0.1.0"
