"""Mollweide scatter plots of rotation samples, written as plain SVG.

Each rotation R is shown as the point its z-column makes on the sphere
(longitude/latitude in Mollweide projection) colored by the in-plane tilt
angle, so blob-, stripe- and checker-structured densities are readable at
a glance. The writer emits deterministic bytes for identical inputs.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from . import targets
from .validation import check_rotations

_NEWTON_ITERS = 12
_POINT_RADIUS = 2.0
_MARGIN = 10.0


def mollweide_xy(lon: np.ndarray, lat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mollweide projection onto x in [-2 sqrt 2, 2 sqrt 2], y in [-sqrt 2, sqrt 2].

    The auxiliary angle solves 2 theta + sin(2 theta) = pi sin(lat) by
    Newton iteration (poles handled exactly).
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    theta = lat.copy()
    at_pole = np.abs(np.abs(lat) - np.pi / 2) < 1e-12
    rhs = np.pi * np.sin(lat)
    for _ in range(_NEWTON_ITERS):
        f = 2.0 * theta + np.sin(2.0 * theta) - rhs
        df = 2.0 + 2.0 * np.cos(2.0 * theta)
        theta = np.where(at_pole, theta, theta - f / np.maximum(df, 1e-12))
    theta = np.where(at_pole, np.sign(lat) * np.pi / 2, theta)
    x = 2.0 * np.sqrt(2.0) / np.pi * lon * np.cos(theta)
    y = np.sqrt(2.0) * np.sin(theta)
    return x, y


def _hsl_to_rgb(h: float, s: float, light: float) -> tuple[int, int, int]:
    c = (1.0 - abs(2.0 * light - 1.0)) * s
    hp = (h % 360.0) / 60.0
    xcomp = c * (1.0 - abs(hp % 2.0 - 1.0))
    r, g, b = [
        (c, xcomp, 0.0),
        (xcomp, c, 0.0),
        (0.0, c, xcomp),
        (0.0, xcomp, c),
        (xcomp, 0.0, c),
        (c, 0.0, xcomp),
    ][int(hp) % 6]
    m = light - c / 2.0
    return tuple(int(round(255.0 * (v + m))) for v in (r, g, b))


def tilt_color(tilt: float) -> str:
    """Hex color encoding the tilt angle as hue."""
    hue = (tilt + np.pi) / (2.0 * np.pi) * 360.0
    r, g, b = _hsl_to_rgb(hue, 0.75, 0.45)
    return f"#{r:02x}{g:02x}{b:02x}"


def rotation_plot_coords(
    rotations: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(longitude, latitude, tilt) of the z-column of each rotation."""
    R = check_rotations(rotations)
    az, cp, tilt = targets.canonical_coords(R)
    lon = np.where(az > np.pi, az - 2.0 * np.pi, az)
    lat = np.arcsin(np.clip(cp, -1.0, 1.0))
    return lon, lat, tilt


def scatter_svg(
    path,
    rotations: np.ndarray,
    title: str = "",
    width: int = 720,
) -> None:
    """Write a Mollweide scatter of the rotations as an SVG file."""
    lon, lat, tilt = rotation_plot_coords(rotations)
    px, py = mollweide_xy(lon, lat)
    half_w = 2.0 * np.sqrt(2.0)
    half_h = np.sqrt(2.0)
    scale = (width - 2.0 * _MARGIN) / (2.0 * half_w)
    height = int(2.0 * (_MARGIN + half_h * scale)) + (30 if title else 0)
    cx = width / 2.0
    cy = _MARGIN + half_h * scale + (30 if title else 0)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        lines.append(
            f'<text x="{cx:.1f}" y="20" text-anchor="middle" '
            f'font-family="monospace" font-size="14">{escape(title)}</text>'
        )
    lines.append(
        f'<ellipse cx="{cx:.1f}" cy="{cy:.1f}" rx="{half_w * scale:.1f}" '
        f'ry="{half_h * scale:.1f}" fill="none" stroke="#888" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{cx - half_w * scale:.1f}" y1="{cy:.1f}" '
        f'x2="{cx + half_w * scale:.1f}" y2="{cy:.1f}" '
        'stroke="#ccc" stroke-width="0.5"/>'
    )
    lines.append(
        f'<line x1="{cx:.1f}" y1="{cy - half_h * scale:.1f}" '
        f'x2="{cx:.1f}" y2="{cy + half_h * scale:.1f}" '
        'stroke="#ccc" stroke-width="0.5"/>'
    )
    for j in range(px.shape[0]):
        x = cx + px[j] * scale
        y = cy - py[j] * scale
        lines.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{_POINT_RADIUS}" '
            f'fill="{tilt_color(float(tilt[j]))}" fill-opacity="0.6"/>'
        )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
