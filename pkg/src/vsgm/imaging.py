"""Image helpers: 16-bit depth PGMs (OpenCV) and 8-bit render PGMs (Pillow)."""

from pathlib import Path
from typing import Union

import cv2
import numpy as np
from PIL import Image

#: Depth PGMs store millimetres.
DEPTH_SCALE = 1000.0


# -----------------------------------------------------------------------------
# Depth images
# -----------------------------------------------------------------------------
def read_depth_pgm(path: Union[Path, str]) -> np.ndarray:
    """Read a binary 16-bit PGM of millimetres and return metres as float64.

    Args:
        path: Path to a ``P5`` PGM.

    Returns:
        np.ndarray: ``(height, width)`` depth in metres.

    Raises:
        FileNotFoundError: The file does not exist.
        ValueError: OpenCV cannot decode it or it is not single-channel.

    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"depth file not found: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"Could not decode {path} as PGM.")
    if raw.ndim != 2:
        raise ValueError(f"depth image {path} must be single-channel, got shape {raw.shape}")
    return raw.astype(np.float64) / DEPTH_SCALE


def write_depth_pgm(path: Union[Path, str], depth_m: np.ndarray) -> Path:
    """Write depth in metres as a 16-bit millimetre PGM.

    Values are rounded to the nearest millimetre and clipped to ``[0, 65535]``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mm = np.clip(np.rint(np.asarray(depth_m, dtype=np.float64) * DEPTH_SCALE), 0, 65535)
    if not cv2.imwrite(str(path), mm.astype(np.uint16)):
        raise ValueError(f"OpenCV failed to write {path}")
    return path


# -----------------------------------------------------------------------------
# Renders
# -----------------------------------------------------------------------------
def write_gray_pgm(path: Union[Path, str], pixels: np.ndarray) -> Path:
    """Save a 2-D uint8 array as an 8-bit binary PGM with Pillow."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"render must be 2-D, got shape {arr.shape}")
    img = Image.fromarray(arr.astype(np.uint8))
    if img.mode != "L":
        img = img.convert("L")
    img.save(path, format="PPM")
    return path


def read_gray_pgm(path: Union[Path, str]) -> np.ndarray:
    """Load an 8-bit PGM back into a uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)
