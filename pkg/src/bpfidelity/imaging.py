"""Test images, PGM I/O, resizing and bicubic interpolation."""
from __future__ import annotations

import os

import numpy as np
import scipy.ndimage

from .errors import ShapeError


def phantom(size: int = 64) -> np.ndarray:
    """Synthetic piecewise-smooth grayscale scene with values in [0, 255].

    A bright graded sky with low buildings on the horizon, a textured
    ground band, and a dark figure (head, body, camera and three thin
    legs) standing in the middle, so the image has smooth regions, fine
    texture and sharp edges of varied orientation.  Deterministic for a
    given ``size``.
    """
    r, c = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")
    img = 200 - 60 * r + 15 * np.cos(3 * c)  # sky
    for c0, c1, top in ((0.05, 0.18, 0.58), (0.7, 0.78, 0.52), (0.82, 0.95, 0.6)):
        img = np.where((c > c0) & (c < c1) & (r > top), 150 - 20 * (c - c0) / (c1 - c0), img)
    ground = r > 0.72 + 0.05 * np.sin(5 * c)
    grass = scipy.ndimage.gaussian_filter(np.random.default_rng(7).standard_normal((size, size)), 0.6, mode="wrap")
    grass *= 18 / grass.std()
    img = np.where(ground, 120 + 40 * (r - 0.72) + 10 * np.sin(9 * c) + grass, img)
    body = ((c - 0.45) / 0.12) ** 2 + ((r - 0.5) / 0.2) ** 2 < 1
    head = ((c - 0.45) / 0.07) ** 2 + ((r - 0.24) / 0.075) ** 2 < 1
    camera = (np.abs(c - 0.6) < 0.06) & (np.abs(r - 0.33) < 0.04)
    img = np.where(body | head, 25 + 20 * r, img)
    img = np.where(camera, 55.0, img)
    for c0, slope in ((0.45, 0.0), (0.4, -0.35), (0.5, 0.35)):
        leg = (np.abs(c - (c0 + slope * (r - 0.65))) < 0.012) & (r > 0.65) & (r < 0.93)
        img = np.where(leg, 15.0, img)
    return np.clip(img, 0, 255)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM file as a float array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).astype(np.float64)


def write_pgm(path: str | os.PathLike, image) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    if img.ndim != 2:
        raise ShapeError("PGM images are 2D")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def resize(image, shape) -> np.ndarray:
    """Resample to ``shape`` with cubic-spline zoom, clipped to [0, 255]."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape == tuple(shape):
        return image.copy()
    factors = (shape[0] / image.shape[0], shape[1] / image.shape[1])
    out = scipy.ndimage.zoom(image, factors, order=3, mode="nearest", grid_mode=True)
    return np.clip(out, 0, 255)


def load_image(path=None, size: int = 64) -> np.ndarray:
    """A ``size x size`` test image: the PGM at ``path`` (resized) or the phantom."""
    if path is None:
        return phantom(size)
    return resize(read_pgm(path), (size, size))


def _cubic_weights(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _interp_matrix(n_in: int, n_out: int, factor: int, a: float) -> np.ndarray:
    """Rows give output samples at low-res coordinate ``p / factor``."""
    pos = np.arange(n_out) / factor
    base = np.floor(pos).astype(int)
    W = np.zeros((n_out, n_in))
    for off in (-1, 0, 1, 2):
        idx = base + off
        w = _cubic_weights(pos - idx, a)
        np.add.at(W, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return W


def bicubic_upsample(image, factor: int, out_shape=None, a: float = -0.5) -> np.ndarray:
    """Separable cubic-convolution upsampling with replicated edges.

    Low-res sample ``(i, j)`` lands on high-res pixel ``(factor i, factor j)``
    (the phase kept by :class:`~bpfidelity.linops.Downsample2D`).  The
    result is cropped to ``out_shape`` (default ``factor`` times the input).
    """
    if int(factor) != factor or factor < 2:
        raise ValueError("factor must be an integer >= 2")
    factor = int(factor)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError("bicubic_upsample expects a 2D image")
    h, w = image.shape
    oh, ow = (h * factor, w * factor) if out_shape is None else out_shape
    Wr = _interp_matrix(h, oh, factor, a)
    Wc = _interp_matrix(w, ow, factor, a)
    return Wr @ image @ Wc.T
