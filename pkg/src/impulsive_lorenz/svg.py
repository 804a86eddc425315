"""Minimal SVG emitter for line and scatter plots."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    kind: str = "line"
    yerr: Sequence[float] | None = None


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 420
    series: list = field(default_factory=list)

    def add(self, *args, **kw) -> "Figure":
        self.series.append(Series(*args, **kw))
        return self

    def render(self) -> str:
        ml, mr, mt, mb = 70, 20, 40, 50
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs = np.concatenate([np.asarray(s.x, dtype=float) for s in self.series]) if self.series else np.zeros(1)
        ys = np.concatenate([np.asarray(s.y, dtype=float) for s in self.series]) if self.series else np.zeros(1)
        fin = np.isfinite(xs) & np.isfinite(ys)
        xs, ys = (xs[fin], ys[fin]) if fin.any() else (np.zeros(1), np.zeros(1))
        x0, x1 = _pad(xs.min(), xs.max())
        y0, y1 = _pad(ys.min(), ys.max())

        def px(x):
            return ml + (x - x0) / (x1 - x0) * pw

        def py(y):
            return mt + ph - (y - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="12">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
               f'<text x="{self.width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(self.title)}</text>',
               f'<text x="{ml + pw / 2:.1f}" y="{self.height - 12}" text-anchor="middle">{_esc(self.xlabel)}</text>',
               f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(self.ylabel)}</text>']
        for t in np.linspace(x0, x1, 5):
            out.append(f'<text x="{px(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{t:.3g}</text>')
        for t in np.linspace(y0, y1, 5):
            out.append(f'<text x="{ml - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
        for i, s in enumerate(self.series):
            color = PALETTE[i % len(PALETTE)]
            x = np.asarray(s.x, dtype=float)
            y = np.asarray(s.y, dtype=float)
            ok = np.isfinite(x) & np.isfinite(y)
            if s.kind == "line":
                pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for a, b in zip(x[ok], y[ok]):
                r = 2.5 if s.kind == "line" else 1.0
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="{r}" fill="{color}"/>')
            if s.yerr is not None:
                e = np.asarray(s.yerr, dtype=float)
                for a, b, d in zip(x[ok], y[ok], e[ok]):
                    out.append(f'<line x1="{px(a):.2f}" x2="{px(a):.2f}" y1="{py(b - d):.2f}" '
                               f'y2="{py(b + d):.2f}" stroke="{color}"/>')
            if s.label:
                out.append(f'<text x="{ml + pw - 8}" y="{mt + 16 + 16 * i}" text-anchor="end" '
                           f'fill="{color}">{_esc(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _pad(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    d = 0.05 * (hi - lo)
    return lo - d, hi + d


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
