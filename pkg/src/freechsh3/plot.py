"""Dependency-free SVG line plots for curve outputs."""

from __future__ import annotations


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + step * k for k in range(count)]


def svg_line_plot(
    points: list[tuple[float, float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
    width: int = 640,
    height: int = 420,
) -> str:
    """Render one polyline with axes and tick labels as an SVG document."""
    margin_l, margin_r, margin_t, margin_b = 70, 20, 40, 55
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    finite = [(x, y) for x, y in points if y == y]
    if finite:
        xs = [p[0] for p in finite]
        ys = [p[1] for p in finite]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    y_pad = 0.05 * (y_hi - y_lo)
    y_lo -= y_pad
    y_hi += y_pad

    def px(x: float) -> float:
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return margin_t + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    axis_style = 'stroke="black" stroke-width="1"'
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
        f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" {axis_style}/>'
    )
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t}" '
        f'x2="{margin_l}" y2="{margin_t + plot_h}" {axis_style}/>'
    )
    for tick in _ticks(x_lo, x_hi):
        x = px(tick)
        parts.append(
            f'<line x1="{x:.1f}" y1="{margin_t + plot_h}" '
            f'x2="{x:.1f}" y2="{margin_t + plot_h + 5}" {axis_style}/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{margin_t + plot_h + 20}" '
            f'text-anchor="middle" font-family="sans-serif" '
            f'font-size="12">{tick:.2f}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        y = py(tick)
        parts.append(
            f'<line x1="{margin_l - 5}" y1="{y:.1f}" '
            f'x2="{margin_l}" y2="{y:.1f}" {axis_style}/>'
        )
        parts.append(
            f'<text x="{margin_l - 9}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{tick:.2f}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 12}" '
        f'text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {margin_t + plot_h / 2:.1f})">{ylabel}</text>'
    )
    if finite:
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in finite)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="#1f6fb2" '
            f'stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
