"""Deterministic SVG serialisation of computed geometry.

Pure output layer: nothing in here computes; callers pass finished point
arrays.  Coordinates are formatted with a fixed precision so golden-file and
replay tests diff cleanly.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SvgCanvas"]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


class SvgCanvas:
    """Collects shapes in data coordinates and serialises one <svg> document."""

    def __init__(self, xlim=(-2.5, 2.5), ylim=(-2.5, 2.5), size=640):
        self.xlim = xlim
        self.ylim = ylim
        self.size = size
        self._elems: list[str] = []

    def _tx(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        sx = self.size / (self.xlim[1] - self.xlim[0])
        sy = self.size / (self.ylim[1] - self.ylim[0])
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] - self.xlim[0]) * sx
        out[..., 1] = self.size - (pts[..., 1] - self.ylim[0]) * sy
        return out

    def polyline(self, pts, stroke="black", width=1.0, closed=False, opacity=1.0):
        p = self._tx(np.asarray(pts))
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in p)
        tag = "polygon" if closed else "polyline"
        self._elems.append(
            f'<{tag} points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>')

    def circles(self, centers, radii, stroke="black", fill="none", opacity=1.0):
        c = self._tx(np.asarray(centers))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (c.shape[0],))
        scale = self.size / (self.xlim[1] - self.xlim[0])
        for (x, y), r in zip(c, radii):
            self._elems.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r * scale)}" '
                f'fill="{fill}" stroke="{stroke}" fill-opacity="{_fmt(opacity)}" '
                f'stroke-opacity="{_fmt(opacity)}"/>')

    def grid(self, points, shape, stroke="#888888", width=0.5):
        """Draw a warped rectangular grid given flat points and its (nx, ny)."""
        pts = np.asarray(points, dtype=float).reshape(*shape, 2)
        for i in range(shape[0]):
            self.polyline(pts[i, :], stroke=stroke, width=width)
        for j in range(shape[1]):
            self.polyline(pts[:, j], stroke=stroke, width=width)

    def to_string(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" '
                f'height="{self.size}" viewBox="0 0 {self.size} {self.size}">')
        return "\n".join([head, *self._elems, "</svg>"]) + "\n"

    def write(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(self.to_string())
