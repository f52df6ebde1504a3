"""featx: turn image files into .capf feature-grid files.

Images are decoded, resized, normalized, and pushed through a headless
EfficientNet-B0; the resulting spatial grid is flattened to a
(positions x channels) float32 matrix and written in the .capf container
that the imgcap trainer consumes. The two packages share only that file
format — featx never imports imgcap.
"""

from featx.capf import read_capf, write_capf
from featx.extract import ExtractJob, extract, verify

__all__ = ["ExtractJob", "extract", "verify", "read_capf", "write_capf"]
