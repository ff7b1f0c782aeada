"""Figures from a finished study directory, as plain SVG plus the CSV behind each.

Outputs per scenario ``s`` with saved draws:

* ``violin_s{s}.csv`` / ``.svg``: posterior draws of N_alpha for each alpha
  on the grid, of N at alpha_inf,0.5, and of N, with the replicate's truths;
* ``eta_s{s}.svg``: true and estimated observability densities on the
  logit scale (from ``eta_s{s}.csv`` written by the study).

Numbers are printed with fixed precision so output bytes depend only on
the inputs.
"""
from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats

PALETTE = ("#000000", "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e")
W, H = 640, 400
MARGIN = dict(left=70, right=20, top=30, bottom=50)


class MissingStudyArtifacts(FileNotFoundError):
    pass


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise MissingStudyArtifacts(f"{path.name} has no data rows")
    return rows[0], rows[1:]


def violin_groups(header, rows) -> dict[str, np.ndarray]:
    """Groups in plotting order: one per alpha column, then alpha_inf, then N."""
    cols = {name: i for i, name in enumerate(header)}
    groups = {}
    for name in header:
        if name.startswith("N_alpha_") and name != "N_alpha_inf":
            groups[f"alpha={name[len('N_alpha_'):]}"] = np.array([float(r[cols[name]]) for r in rows])
    groups["alpha_inf"] = np.array([float(r[cols["N_alpha_inf"]]) for r in rows])
    groups["N"] = np.array([float(r[cols["N"]]) for r in rows])
    return groups


def violin_csv(groups, truth: dict | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "value", "truth"])
    for g, vals in groups.items():
        t = ""
        if truth is not None:
            if g == "N":
                t = truth["N"]
            elif g.startswith("alpha="):
                t = truth["N_alpha"].get(g[len("alpha="):], "")
        for v in vals:
            w.writerow([g, f"{v:.0f}", t])
    return buf.getvalue()


def _num(x):
    return f"{x:.2f}"


def _svg(body: list[str], title: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _axes(x0, x1, y0, y1, yticks, ylabel, xlabel=""):
    L, R, T, B = MARGIN["left"], W - MARGIN["right"], MARGIN["top"], H - MARGIN["bottom"]
    out = [f'<path d="M{L} {T} L{L} {B} L{R} {B}" stroke="black" fill="none"/>']
    for v in yticks:
        y = B - (v - y0) / (y1 - y0) * (B - T)
        out.append(f'<line x1="{L - 4}" y1="{_num(y)}" x2="{L}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{L - 6}" y="{_num(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="10">{v:g}</text>')
    out.append(
        f'<text x="14" y="{(T + B) / 2:.1f}" transform="rotate(-90 14 {(T + B) / 2:.1f})" '
        f'text-anchor="middle" font-family="sans-serif" font-size="11">{escape(ylabel)}</text>'
    )
    if xlabel:
        out.append(f'<text x="{(L + R) / 2:.1f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="11">{escape(xlabel)}</text>')
    return out


def _nice_ticks(lo, hi, n=5):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def violin_svg(groups, truth: dict | None = None, title: str = "") -> str:
    names = list(groups)
    allv = np.concatenate([groups[g] for g in names])
    lo, hi = float(allv.min()), float(allv.max())
    if truth is not None:
        lo, hi = min(lo, truth["N"]), max(hi, truth["N"])
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    y0, y1 = lo - pad, hi + pad
    L, R, T, B = MARGIN["left"], W - MARGIN["right"], MARGIN["top"], H - MARGIN["bottom"]
    slot = (R - L) / len(names)
    body = _axes(0, 1, y0, y1, _nice_ticks(y0, y1), "posterior draws")

    def ypix(v):
        return B - (v - y0) / (y1 - y0) * (B - T)

    for i, g in enumerate(names):
        v = groups[g]
        cx = L + slot * (i + 0.5)
        if np.ptp(v) > 0:
            grid = np.linspace(v.min(), v.max(), 80)
            dens = stats.gaussian_kde(v)(grid)
            half = 0.42 * slot * dens / dens.max()
            pts = [(cx - hw, ypix(y)) for y, hw in zip(grid, half)]
            pts += [(cx + hw, ypix(y)) for y, hw in zip(grid[::-1], half[::-1])]
            d = "M" + " L".join(f"{_num(x)} {_num(y)}" for x, y in pts) + " Z"
            body.append(f'<path d="{d}" fill="#9ecae1" stroke="#3182bd"/>')
        else:
            body.append(f'<line x1="{_num(cx - 0.3 * slot)}" y1="{_num(ypix(v[0]))}" x2="{_num(cx + 0.3 * slot)}" y2="{_num(ypix(v[0]))}" stroke="#3182bd"/>')
        med = float(np.median(v))
        body.append(f'<circle cx="{_num(cx)}" cy="{_num(ypix(med))}" r="2.5" fill="black"/>')
        t = None
        if truth is not None:
            t = truth["N"] if g == "N" else truth["N_alpha"].get(g[len("alpha="):]) if g.startswith("alpha=") else None
        if t is not None:
            body.append(f'<line x1="{_num(cx - 0.4 * slot)}" y1="{_num(ypix(t))}" x2="{_num(cx + 0.4 * slot)}" y2="{_num(ypix(t))}" stroke="red" stroke-width="1.5"/>')
        body.append(f'<text x="{_num(cx)}" y="{B + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{escape(g)}</text>')
    return _svg(body, title)


def eta_svg(header, rows, title: str = "") -> str:
    eta = np.array([float(r[0]) for r in rows])
    series = {name: np.array([float(r[i]) for r in rows]) for i, name in enumerate(header) if i > 0}
    finite = [s[np.isfinite(s)] for s in series.values()]
    ymax = max((float(s.max()) for s in finite if s.size), default=1.0) * 1.05 or 1.0
    L, R, T, B = MARGIN["left"], W - MARGIN["right"], MARGIN["top"], H - MARGIN["bottom"]
    x0, x1 = float(eta.min()), float(eta.max())
    body = _axes(x0, x1, 0.0, ymax, _nice_ticks(0.0, ymax), "density", "eta (logit scale)")
    for v in _nice_ticks(x0, x1):
        x = L + (v - x0) / (x1 - x0) * (R - L)
        body.append(f'<text x="{_num(x)}" y="{B + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:g}</text>')
    for k, (name, ys) in enumerate(series.items()):
        ok = np.isfinite(ys)
        if not ok.any():
            continue
        pts = [
            (L + (e - x0) / (x1 - x0) * (R - L), B - y / ymax * (B - T))
            for e, y in zip(eta[ok], ys[ok])
        ]
        d = "M" + " L".join(f"{_num(x)} {_num(y)}" for x, y in pts)
        color = PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="5 3"' if name == "true" else ""
        body.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        body.append(f'<text x="{R - 90}" y="{T + 14 * (k + 1)}" font-family="sans-serif" font-size="11" fill="{color}">{escape(name)}</text>')
    return _svg(body, title)


def render_report(study_dir) -> list[Path]:
    """Write violin and eta figures for every saved draw / density file."""
    study_dir = Path(study_dir)
    if not study_dir.is_dir():
        raise MissingStudyArtifacts(f"{study_dir} is not a directory")
    draws = sorted(study_dir.glob("draws_s*_r*.csv"))
    if not draws:
        raise MissingStudyArtifacts(f"no draws_s*_r*.csv in {study_dir}")
    written = []
    for path in draws:
        s, r = re.match(r"draws_s(\d+)_r(\d+)\.csv", path.name).groups()
        header, rows = _read_csv(path)
        groups = violin_groups(header, rows)
        tpath = study_dir / f"truth_s{s}_r{r}.json"
        truth = json.loads(tpath.read_text()) if tpath.exists() else None
        stem = f"violin_s{s}_r{r}"
        (study_dir / f"{stem}.csv").write_text(violin_csv(groups, truth))
        (study_dir / f"{stem}.svg").write_text(violin_svg(groups, truth, f"scenario {s}, replicate {r}"))
        written += [study_dir / f"{stem}.csv", study_dir / f"{stem}.svg"]
    for path in sorted(study_dir.glob("eta_s*.csv")):
        s = re.match(r"eta_s(\d+)\.csv", path.name).group(1)
        header, rows = _read_csv(path)
        out = study_dir / f"eta_s{s}.svg"
        out.write_text(eta_svg(header, rows, f"observability density, scenario {s}"))
        written.append(out)
    return written
