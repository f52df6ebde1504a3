"""Synthetic photo corpus shared by the featx tests."""

from PIL import Image, ImageDraw

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (40, 70, 220),
    "yellow": (230, 210, 40),
    "purple": (150, 50, 190),
    "orange": (240, 140, 30),
}
SHAPES = ("circle", "square", "triangle", "cross", "ring")

TEMPLATES = (
    "a {c} {s} on a white background",
    "the {c} {s} sits in the center",
    "one {c} {s} drawn in the middle",
    "a simple {c} {s} in this picture",
    "photo of a {c} {s}",
)


def draw_shape(color_name: str, shape: str, size: int = 299) -> Image.Image:
    img = Image.new("RGB", (size, size), (245, 245, 245))
    draw = ImageDraw.Draw(img)
    rgb = COLORS[color_name]
    lo, hi = size // 5, size * 4 // 5
    if shape == "circle":
        draw.ellipse([lo, lo, hi, hi], fill=rgb)
    elif shape == "square":
        draw.rectangle([lo, lo, hi, hi], fill=rgb)
    elif shape == "triangle":
        draw.polygon([(size // 2, lo), (lo, hi), (hi, hi)], fill=rgb)
    elif shape == "cross":
        bar = size // 10
        draw.rectangle([size // 2 - bar, lo, size // 2 + bar, hi], fill=rgb)
        draw.rectangle([lo, size // 2 - bar, hi, size // 2 + bar], fill=rgb)
    elif shape == "ring":
        draw.ellipse([lo, lo, hi, hi], outline=rgb, width=size // 8)
    else:
        raise ValueError(shape)
    return img
