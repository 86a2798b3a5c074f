"""Static biplot: factor-score scatter plus dimensionless loading arrows."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .canon import CanonicalModel
from .core import Dataset, factor_scores
from .io import write_table


@dataclass
class BiplotData:
    axes: tuple[int, int]  # 1-based latent indices
    scores: np.ndarray  # (N, 2)
    arrows: np.ndarray  # (p, 2) rows of c [W_hat; G_hat] on the chosen axes
    features: list[str]
    radius: float  # c, the largest possible arrow length
    labels: tuple[str, str]
    arrow_scale: float
    color: np.ndarray | None = None


def biplot_data(model: CanonicalModel, data: Dataset, axes=(1, 2), color_by=None, arrow_scale="auto") -> BiplotData:
    params = model.params
    a, b = axes
    if not (1 <= a <= params.p_z and 1 <= b <= params.p_z) or a == b:
        raise ValueError(f"axes {axes} must be two distinct indices in 1..{params.p_z}")
    if not data.is_complete:
        raise ValueError("biplot needs complete rows")
    cols = [a - 1, b - 1]
    scores = factor_scores(params, data.x, data.y)[:, cols]
    arrows = params.M[:, cols]
    color = None
    if color_by is not None:
        names = data.schema.continuous_names
        if color_by not in names:
            raise ValueError(f"color column {color_by!r} is not a continuous column")
        color = data.x[:, names.index(color_by)]
    c = params.c
    if arrow_scale == "auto":
        rad = np.linalg.norm(scores - params.mu_z[cols], axis=1)
        scale = float(np.percentile(rad, 95)) / c if c > 0 else 1.0
        scale = scale if scale > 0 else 1.0
    else:
        scale = float(arrow_scale)
    P = model.P
    labels = tuple(f"z_{k} ({100 * P[k - 1]:.1f}%)" for k in (a, b))
    return BiplotData((a, b), scores, arrows, data.schema.names, c, labels, scale, color)


def write_biplot_csv(bp: BiplotData, path) -> None:
    rows = []
    for i, s in enumerate(bp.scores):
        rows.append({"kind": "score", "name": str(i), "u": s[0], "v": s[1]})
    for name, arr in zip(bp.features, bp.arrows):
        rows.append({"kind": "loading", "name": name, "u": arr[0], "v": arr[1]})
    rows.append({"kind": "axis_label", "name": bp.labels[0], "u": float(bp.axes[0]), "v": float("nan")})
    rows.append({"kind": "axis_label", "name": bp.labels[1], "u": float(bp.axes[1]), "v": float("nan")})
    rows.append({"kind": "circle_radius", "name": "c", "u": bp.radius, "v": float("nan")})
    rows.append({"kind": "arrow_scale", "name": "scale", "u": bp.arrow_scale, "v": float("nan")})
    write_table(rows, path, ["kind", "name", "u", "v"])


def _ramp(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    return f"rgb({int(round(255 * t))},0,{int(round(255 * (1 - t)))})"


def render_svg(bp: BiplotData, size: int = 640) -> str:
    margin = 60
    arrows = bp.arrows * bp.arrow_scale
    circle = bp.radius * bp.arrow_scale
    extent = max(
        np.abs(bp.scores).max(initial=0.0), np.abs(arrows).max(initial=0.0), circle, 1e-12
    ) * 1.1
    half = (size - 2 * margin) / 2.0
    cx = cy = size / 2.0

    def px(u, v):
        return cx + u / extent * half, cy - v / extent * half

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        '<defs><marker id="head" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto">'
        '<path d="M0,0 L8,4 L0,8 z" fill="#333"/></marker></defs>',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{margin}" y1="{cy:.2f}" x2="{size - margin}" y2="{cy:.2f}" stroke="#bbb"/>',
        f'<line x1="{cx:.2f}" y1="{margin}" x2="{cx:.2f}" y2="{size - margin}" stroke="#bbb"/>',
        f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{circle / extent * half:.2f}" fill="none" '
        'stroke="#666" stroke-dasharray="6,4"/>',
    ]
    if bp.color is not None:
        lo, hi = np.nanmin(bp.color), np.nanmax(bp.color)
        tvals = (bp.color - lo) / (hi - lo) if hi > lo else np.full(bp.color.shape, 0.5)
    else:
        tvals = None
    for i, (u, v) in enumerate(bp.scores):
        x, y = px(u, v)
        fill = _ramp(tvals[i]) if tvals is not None else "#4a6fa5"
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{fill}" fill-opacity="0.6"/>')
    for name, (u, v) in zip(bp.features, arrows):
        x, y = px(u, v)
        out.append(
            f'<line x1="{cx:.2f}" y1="{cy:.2f}" x2="{x:.2f}" y2="{y:.2f}" stroke="#333" '
            'stroke-width="1.5" marker-end="url(#head)"/>'
        )
        out.append(f'<text x="{x + 4:.2f}" y="{y - 4:.2f}" font-size="12">{escape(name)}</text>')
    out.append(
        f'<text x="{cx:.2f}" y="{size - 15}" font-size="14" text-anchor="middle">{escape(bp.labels[0])}</text>'
    )
    out.append(
        f'<text x="20" y="{cy:.2f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 20 {cy:.2f})">{escape(bp.labels[1])}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_biplot_svg(bp: BiplotData, path) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(bp))
