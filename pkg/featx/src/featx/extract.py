"""Decode images, run a headless EfficientNet-B0, and write .capf grids."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from featx.capf import read_capf, write_capf
from featx.errors import BackboneError, FormatError, InputError

log = logging.getLogger("featx")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}

# EfficientNet's published ImageNet preprocessing constants.
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class ExtractJob:
    image_dir: Path
    output_dir: Path
    target_size: tuple[int, int] = (299, 299)  # (height, width)
    pooled: bool = False
    weights: str = "pretrained"  # or "random"
    seed: int = 0

    def __post_init__(self):
        h, w = self.target_size
        if h <= 0 or w <= 0:
            raise InputError(f"target_size must be positive, got {self.target_size}")
        if self.weights not in ("pretrained", "random"):
            raise InputError(f"weights must be 'pretrained' or 'random', got {self.weights!r}")


def load_backbone(weights: str = "pretrained", seed: int = 0):
    """Return EfficientNet-B0 with its pooling/classifier head removed.

    ``weights='random'`` seeds torch and skips the download — the features
    are reproducible and still separate distinct images, but carry no
    ImageNet semantics.
    """
    import torch
    from torchvision import models

    if weights == "pretrained":
        try:
            net = models.efficientnet_b0(
                weights=models.EfficientNet_B0_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise BackboneError(
                f"could not load pretrained EfficientNet-B0 weights ({exc}); "
                "if this machine has no access to the download host, rerun "
                "with --weights random") from exc
    elif weights == "random":
        torch.manual_seed(seed)
        net = models.efficientnet_b0(weights=None)
        # Untrained batch norms carry placeholder running stats (mean 0,
        # var 1) that never match real activations; through ~65 layers the
        # activations collapse to ~1e-13 and stop separating images.
        # Dropping the stats makes each norm use its per-forward spatial
        # statistics instead: outputs stay O(1), depend only on the current
        # image, and are deterministic for a given seed.
        for mod in net.modules():
            if isinstance(mod, torch.nn.BatchNorm2d):
                mod.running_mean = None
                mod.running_var = None
                mod.track_running_stats = False
    else:
        raise InputError(f"unknown weights mode {weights!r}")
    net.eval()
    return net.features  # drop avgpool + classifier


def preprocess(image: Image.Image, target_size: tuple[int, int]) -> np.ndarray:
    """RGB-decode, resize (bilinear), scale to [0,1], ImageNet-normalize.

    Returns a (3, H, W) float32 array.
    """
    h, w = target_size
    rgb = image.convert("RGB").resize((w, h), Image.BILINEAR)
    x = np.asarray(rgb, dtype=np.float32) / 255.0  # (H, W, 3)
    x = (x - CHANNEL_MEAN) / CHANNEL_STD
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def grid_from_activation(act: np.ndarray, pooled: bool) -> np.ndarray:
    """(C, h, w) activation -> (h*w, C) row-major grid, or (1, C) if pooled."""
    c, h, w = act.shape
    if pooled:
        return act.reshape(c, h * w).mean(axis=1, dtype=np.float32).reshape(1, c)
    return np.ascontiguousarray(act.reshape(c, h * w).T)


def _image_paths(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise InputError(f"image directory not found: {image_dir}")
    return sorted(p for p in image_dir.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def extract(job: ExtractJob) -> int:
    """Write one ``<image name>.capf`` per decodable image; return the count."""
    import torch

    paths = _image_paths(Path(job.image_dir))
    if not paths:
        raise InputError(f"no images (jpg/jpeg/png/bmp) in {job.image_dir}")
    backbone = load_backbone(job.weights, job.seed)
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = 0
    with torch.no_grad():
        for path in paths:
            try:
                with Image.open(path) as img:
                    x = preprocess(img, job.target_size)
            except Exception as exc:
                log.warning("skipping %s: %s", path.name, exc)
                continue
            act = backbone(torch.from_numpy(x).unsqueeze(0))
            grid = grid_from_activation(act.squeeze(0).numpy(), job.pooled)
            write_capf(out_dir / (path.name + ".capf"), grid)
            written += 1
    log.info("wrote %d of %d feature files to %s", written, len(paths), out_dir)
    return written


@dataclass
class VerifyReport:
    total: int = 0
    shape: tuple[int, ...] | None = None
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def verify(feature_dir) -> VerifyReport:
    """Re-parse every .capf in a directory; check structure, dims, finiteness."""
    feature_dir = Path(feature_dir)
    if not feature_dir.is_dir():
        raise InputError(f"feature directory not found: {feature_dir}")
    paths = sorted(feature_dir.glob("*.capf"))
    if not paths:
        raise InputError(f"no .capf files in {feature_dir}")

    report = VerifyReport(total=len(paths))
    for path in paths:
        try:
            grid = read_capf(path)
        except FormatError as exc:
            report.failures.append((path.name, str(exc)))
            continue
        if report.shape is None:
            report.shape = grid.shape
        elif grid.shape != report.shape:
            report.failures.append(
                (path.name, f"dims {grid.shape} differ from {report.shape}"))
            continue
        if not np.isfinite(grid).all():
            report.failures.append((path.name, "non-finite values"))
    return report
