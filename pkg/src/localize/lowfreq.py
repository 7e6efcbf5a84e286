"""
Low-frequency image score: mean absolute difference between an image and its
low-pass version (ideal radial filter in the Fourier domain). Images scoring
below 20 are classified as low-frequency (blurred, textureless).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from src.errors import DataError

LOW_FREQUENCY_THRESHOLD = 20.0


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray  # (height, width), values in [0, 255]

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise DataError(f"gray image must be a non-empty 2-D array, got shape {pixels.shape}")
        if np.any(pixels < 0) or np.any(pixels > 255):
            raise DataError("gray image intensities must lie in [0, 255]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def radial_mask(height: int, width: int, cutoff_fraction: float) -> np.ndarray:
    """True for DFT coefficients whose radial frequency is at most cutoff_fraction of Nyquist."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.sqrt(fx * fx + fy * fy) <= cutoff_fraction * 0.5


def low_pass(img: GrayImage, cutoff_fraction: float = 0.25) -> np.ndarray:
    spectrum = np.fft.fft2(img.pixels)
    spectrum[~radial_mask(img.height, img.width, cutoff_fraction)] = 0.0
    return np.real(np.fft.ifft2(spectrum))


def lowfreq_score(img: GrayImage, cutoff_fraction: float = 0.25) -> float:
    """
    Mean |original - filtered| over pixels.

    Args:
        img: Grayscale image
        cutoff_fraction: Kept radial frequencies as a fraction of Nyquist

    Returns:
        Score in intensity units; 0 for a constant image
    """
    return float(np.mean(np.abs(img.pixels - low_pass(img, cutoff_fraction))))


def is_low_frequency(score: float, threshold: float = LOW_FREQUENCY_THRESHOLD) -> bool:
    return score < threshold


def write_pgm(img: GrayImage, path: Union[str, Path]) -> None:
    """Binary 8-bit PGM (P5)."""
    data = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")


def read_pgm(path: Union[str, Path]) -> GrayImage:
    """
    Read an 8-bit grayscale image (binary or plain PGM, or anything Pillow decodes).

    Raises:
        DataError: missing, unrecognized or truncated file
    """
    path = Path(path)
    if not path.is_file():
        raise DataError("missing image file", path=str(path))
    try:
        with Image.open(path) as picture:
            pixels = np.asarray(picture.convert("L"))
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"unreadable image: {e}", path=str(path)) from e
    return GrayImage(pixels)


def lowfreq_table(images: Dict[str, GrayImage], cutoff_fraction: float = 0.25,
                  threshold: float = LOW_FREQUENCY_THRESHOLD) -> pd.DataFrame:
    """Score and low-frequency flag per image, sorted by image id."""
    rows = []
    for image_id in sorted(images):
        score = lowfreq_score(images[image_id], cutoff_fraction)
        rows.append({"image_id": image_id, "score": score, "low_frequency": is_low_frequency(score, threshold)})
    return pd.DataFrame(rows, columns=["image_id", "score", "low_frequency"])
