"""Ring-of-Gaussians toy data and the mode-coverage quality metric."""

from __future__ import annotations

import numpy as np

from .tensor import Rng, resolve_dtype


def ring_centers(modes: int = 8, radius: float = 2.0) -> np.ndarray:
    ang = 2 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def sample_ring_gaussians(rng: Rng, batch: int, modes: int = 8, radius: float = 2.0,
                          sigma: float = 0.02, dtype="f64") -> np.ndarray:
    if modes < 1:
        raise ValueError("need at least one mode")
    centers = ring_centers(modes, radius)
    pick = rng.integers(modes, batch)
    noise = rng.normal((batch, 2))
    return (centers[pick] + sigma * noise).astype(resolve_dtype(dtype))


def mode_coverage(samples, modes: int = 8, radius: float = 2.0, sigma: float = 0.02):
    """Count covered modes and the fraction of high-quality samples.

    A sample is high quality when it lies within ``30 * sigma`` of some mode
    center; a mode is covered when at least ``N / (4 * modes)`` samples are
    high quality and nearest to it.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    centers = ring_centers(modes, radius)
    d = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    nearest = d.argmin(axis=1)
    hit = d[np.arange(n), nearest] <= 3 * sigma * 10
    counts = np.bincount(nearest[hit], minlength=modes)
    covered = int((counts >= n / (4 * modes)).sum())
    return covered, float(hit.mean())


def scatter_svg(samples, modes: int = 8, radius: float = 2.0, size: int = 480,
                extent: float = 3.0, title: str = "", comment: str = "") -> str:
    """Static SVG of generator samples (dots) over the mode centers (rings).

    ``comment`` is embedded verbatim as an XML comment (``--`` is escaped).
    """
    samples = np.asarray(samples, dtype=np.float64)

    def px(v):
        return (v + extent) / (2 * extent) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if comment:
        parts.insert(1, "<!-- " + comment.replace("--", "- -") + " -->")
    if title:
        parts.append(f'<text x="8" y="18" font-family="monospace" font-size="12">{title}</text>')
    for x, y in samples:
        if abs(x) <= extent and abs(y) <= extent:
            parts.append(f'<circle cx="{px(x):.2f}" cy="{px(-y):.2f}" r="1.5" fill="#1f77b4" fill-opacity="0.5"/>')
    for cx, cy in ring_centers(modes, radius):
        parts.append(f'<circle cx="{px(cx):.2f}" cy="{px(-cy):.2f}" r="6" fill="none" stroke="#d62728" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
