"""Mollweide projection math and SVG emission."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np

from so3diffusion import plotting, so3


def test_mollweide_fixed_points():
    x, y = plotting.mollweide_xy(np.array([0.0]), np.array([0.0]))
    assert abs(x[0]) < 1e-12 and abs(y[0]) < 1e-12
    # poles map to (0, +-sqrt 2)
    x, y = plotting.mollweide_xy(np.array([0.0, 0.0]), np.array([np.pi / 2, -np.pi / 2]))
    assert np.abs(x).max() < 1e-12
    assert np.abs(np.abs(y) - np.sqrt(2.0)).max() < 1e-12
    # equator edge: lon = +-pi at lat 0 -> x = +-2 sqrt 2
    x, y = plotting.mollweide_xy(np.array([np.pi, -np.pi]), np.array([0.0, 0.0]))
    assert np.abs(np.abs(x) - 2.0 * np.sqrt(2.0)).max() < 1e-12


def test_mollweide_newton_satisfies_defining_equation():
    rng = np.random.default_rng(0)
    lat = rng.uniform(-1.5, 1.5, 200)
    lon = rng.uniform(-np.pi, np.pi, 200)
    x, y = plotting.mollweide_xy(lon, lat)
    theta = np.arcsin(np.clip(y / np.sqrt(2.0), -1.0, 1.0))
    resid = 2.0 * theta + np.sin(2.0 * theta) - np.pi * np.sin(lat)
    assert np.abs(resid).max() < 1e-10


def test_tilt_color_format_and_wraparound():
    c = plotting.tilt_color(0.3)
    assert re.fullmatch(r"#[0-9a-f]{6}", c)
    assert plotting.tilt_color(-np.pi) == plotting.tilt_color(np.pi)


def test_rotation_plot_coords_ranges():
    rng = np.random.default_rng(1)
    R = so3.sample_uniform(rng, size=500)
    lon, lat, tilt = plotting.rotation_plot_coords(R)
    assert np.all((lon > -np.pi - 1e-9) & (lon <= np.pi + 1e-9))
    assert np.all(np.abs(lat) <= np.pi / 2 + 1e-9)
    assert np.all((tilt > -np.pi - 1e-9) & (tilt <= np.pi + 1e-9))


def test_scatter_svg_is_valid_xml_and_deterministic(tmp_path):
    rng = np.random.default_rng(2)
    R = so3.sample_uniform(rng, size=40)
    p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
    plotting.scatter_svg(p1, R, title="x < y & z")
    plotting.scatter_svg(p2, R, title="x < y & z")
    assert p1.read_bytes() == p2.read_bytes()
    root = ET.parse(p1).getroot()
    assert root.tag.endswith("svg")
    circles = [e for e in root.iter() if e.tag.endswith("circle")]
    assert len(circles) == 40
    text = [e for e in root.iter() if e.tag.endswith("text")]
    assert any("x < y & z" in (t.text or "") for t in text)
