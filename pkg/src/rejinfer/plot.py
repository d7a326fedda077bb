"""SVG chart of default rate against acceptance rate, one line per technique.

Two panels: A1-validation (used for selection) and A2. Whiskers span
+-2 binomial standard errors at each grid point.
"""

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939")
PANEL_W, PANEL_H = 420, 300
MARGIN_L, MARGIN_T, MARGIN_B, GAP = 60, 40, 50, 40
LEGEND_W = 150
WHISKER = 2.0


def _fmt(x):
    return f"{x:.2f}"


def _panel(title, curves, x0, y_max, tags):
    out = [f'<g class="panel" data-set="{escape(title)}">']
    left, top = x0 + MARGIN_L, MARGIN_T
    out.append(f'<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" '
               'fill="none" stroke="#333"/>')
    out.append(f'<text x="{left + PANEL_W / 2}" y="{top - 12}" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    grid = curves[tags[0]].grid
    x_lo, x_hi = float(grid[0]), float(grid[-1])
    span = (x_hi - x_lo) or 1.0

    def px(a):
        return left + (a - x_lo) / span * PANEL_W

    def py(r):
        return top + PANEL_H - r / y_max * PANEL_H

    for j in range(5):
        r = y_max * j / 4
        out.append(f'<text x="{left - 6}" y="{_fmt(py(r) + 4)}" text-anchor="end" '
                   f'font-size="10">{r:.3f}</text>')
    for a in grid:
        out.append(f'<text x="{_fmt(px(a))}" y="{top + PANEL_H + 15}" text-anchor="middle" '
                   f'font-size="10">{a:g}</text>')
    out.append(f'<text x="{left + PANEL_W / 2}" y="{top + PANEL_H + 35}" text-anchor="middle" '
               'font-size="12">acceptance rate</text>')
    for k, tag in enumerate(tags):
        c = curves[tag]
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(f"{_fmt(px(a))},{_fmt(py(r))}" for a, r in zip(c.grid, c.rates))
        out.append(f'<polyline class="curve" data-model="{escape(tag)}" points="{points}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5"/>')
        # small horizontal offset so whiskers of different models do not overlap
        dx = (k - (len(tags) - 1) / 2) * 2.0
        for a, r, se in zip(c.grid, c.rates, c.std_errors):
            lo, hi = max(0.0, r - WHISKER * se), r + WHISKER * se
            x = px(a) + dx
            out.append(f'<line class="whisker" data-model="{escape(tag)}" x1="{_fmt(x)}" '
                       f'y1="{_fmt(py(lo))}" x2="{_fmt(x)}" y2="{_fmt(py(hi))}" '
                       f'stroke="{color}" stroke-width="1"/>')
    out.append("</g>")
    return out


def render_svg(report):
    tags = [r.tag for r in report.results]
    panels = [("A1-validation", {r.tag: r.metrics.validation_curve for r in report.results}),
              ("A2", {r.tag: r.a2_curve for r in report.results})]
    y_max = 0.0
    for _, curves in panels:
        for c in curves.values():
            y_max = max(y_max, float((c.rates + WHISKER * c.std_errors).max()))
    y_max = y_max * 1.05 or 1.0
    width = 2 * (MARGIN_L + PANEL_W) + GAP + LEGEND_W
    height = MARGIN_T + PANEL_H + MARGIN_B
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for j, (title, curves) in enumerate(panels):
        out += _panel(title, curves, j * (MARGIN_L + PANEL_W + GAP), y_max, tags)
    lx = 2 * (MARGIN_L + PANEL_W) + GAP + 10
    out.append('<g class="legend">')
    out.append(f'<text x="{lx}" y="{MARGIN_T - 12}" font-size="12">default rate</text>')
    for k, tag in enumerate(tags):
        y = MARGIN_T + 10 + 20 * k
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" stroke="{color}" '
                   'stroke-width="2"/>')
        label = escape(tag + (" (selected)" if tag == report.selected else ""))
        out.append(f'<text x="{lx + 26}" y="{y + 4}" font-size="12">{label}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(report))
    return path
