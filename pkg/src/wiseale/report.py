"""Static SVG figures and CSV tables built from checkpoints and metrics files."""

import csv
import math
import os
from xml.sax.saxutils import escape

import numpy as np

from wiseale import diff_core as dc
from wiseale.model import decode, encode
from wiseale.trainer import METRICS_HEADER

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
CURVE_PANELS = [("recon_term", "reconstruction error", True),
                ("aevb_kl", "AEVB KL yardstick", False),
                ("elbo_proxy", "ELBO proxy", False)]


class FormatError(ValueError):
    pass


def _fmt(v):
    return f"{v:.2f}"


def _svg(width, height, body):
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# CSV helpers


def write_table(path, header, rows):
    """Write rows with floats in round-trip precision."""
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path):
    """Read a table written by :func:`write_table`; numeric cells come back as floats."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = []
        for row in reader:
            out = []
            for cell in row:
                try:
                    out.append(float(cell))
                except ValueError:
                    out.append(cell)
            rows.append(out)
    return header, rows


def read_metrics_csv(path):
    """Metrics file -> ``{column: np.ndarray}``; malformed lines raise with their line number."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}:1: empty file") from None
        if header != METRICS_HEADER:
            raise FormatError(f"{path}:1: unexpected header {','.join(header)}")
        cols = {k: [] for k in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
            for k, v in zip(header, vals):
                cols[k].append(v)
    return {k: np.array(v) for k, v in cols.items()}


# ---------------------------------------------------------------------------
# embedding scatter


def embed_scatter(params, x, out_path, labels=None, n_points=64, seed=0):
    """Posterior 1-sigma ellipses of ``n_points`` random rows in a 2-D latent space.

    Writes the SVG to ``out_path`` and ``(mu1, mu2, sigma1, sigma2, label)`` to
    the same path with a ``.csv`` suffix. Returns the CSV path.
    """
    if params.arch.d_z != 2:
        raise dc.UsageError(f"embedding plot needs d_z=2, checkpoint has d_z={params.arch.d_z}; "
                            "train with --latent-dim 2")
    x = np.asarray(x, dtype=np.float64)
    n_points = min(n_points, x.shape[0])
    pick = np.sort(np.random.default_rng(seed).choice(x.shape[0], n_points, replace=False))
    post = encode(params, x[pick])
    mu, sd = post.mu, np.exp(0.5 * post.log_var)
    lab = np.asarray(labels)[pick] if labels is not None else None

    size, pad = 560, 40
    extent = max(1.0, float(np.max(np.abs(mu) + sd))) * 1.05
    scale = (size - 2 * pad) / (2 * extent)

    def px(u):
        return pad + (u + extent) * scale

    def py(v):
        return size - pad - (v + extent) * scale

    body = [f'<circle cx="{_fmt(px(0))}" cy="{_fmt(py(0))}" r="{_fmt(scale)}" fill="none" '
            f'stroke="#000000" stroke-width="1.5" stroke-dasharray="4 3"/>',
            f'<line x1="{pad}" y1="{_fmt(py(0))}" x2="{size - pad}" y2="{_fmt(py(0))}" stroke="#cccccc"/>',
            f'<line x1="{_fmt(px(0))}" y1="{pad}" x2="{_fmt(px(0))}" y2="{size - pad}" stroke="#cccccc"/>']
    for k in range(n_points):
        color = PALETTE[int(lab[k]) % len(PALETTE)] if lab is not None else PALETTE[0]
        body.append(f'<ellipse cx="{_fmt(px(mu[k, 0]))}" cy="{_fmt(py(mu[k, 1]))}" rx="{_fmt(sd[k, 0] * scale)}" '
                    f'ry="{_fmt(sd[k, 1] * scale)}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>')
    body.append(f'<text x="{pad}" y="{pad - 12}" font-size="13" font-family="sans-serif">'
                f'{escape(f"posterior 1-sigma ellipses, n={n_points}; dashed: N(0, I) 1-sigma")}</text>')
    _write(out_path, _svg(size, size, body))

    csv_path = os.path.splitext(out_path)[0] + ".csv"
    rows = [[float(mu[k, 0]), float(mu[k, 1]), float(sd[k, 0]), float(sd[k, 1]),
             int(lab[k]) if lab is not None else ""] for k in range(n_points)]
    write_table(csv_path, ["mu1", "mu2", "sigma1", "sigma2", "label"], rows)
    return csv_path


# ---------------------------------------------------------------------------
# training curves


def _downsample(n, limit):
    if limit is None or n <= limit:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, limit).round().astype(int))


def training_curves(metrics_paths, out_path, labels=None, max_points=None):
    """Three stacked panels, one polyline per run. Reconstruction error is -recon_term."""
    if not metrics_paths:
        raise dc.UsageError("training_curves needs at least one metrics file")
    runs = [read_metrics_csv(p) for p in metrics_paths]
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0].replace("metrics_", "")
                  if os.path.basename(p) != "metrics.csv" else os.path.basename(os.path.dirname(os.path.abspath(p)))
                  for p in metrics_paths]

    width, panel_h, pad_l, pad_r, pad_t, gap = 720, 200, 90, 170, 30, 40
    height = pad_t + len(CURVE_PANELS) * (panel_h + gap)
    body = []
    for p_i, (col, title, negate) in enumerate(CURVE_PANELS):
        top = pad_t + p_i * (panel_h + gap)
        series = [(-r[col] if negate else r[col]) for r in runs]
        steps = [r["step"] for r in runs]
        lo = min(float(s.min()) for s in series if s.size) if any(s.size for s in series) else 0.0
        hi = max(float(s.max()) for s in series if s.size) if any(s.size for s in series) else 1.0
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        smax = max((float(s.max()) for s in steps if s.size), default=1.0) or 1.0
        x0, x1 = pad_l, width - pad_r
        body.append(f'<g class="panel" id="panel-{col}">')
        body.append(f'<rect x="{x0}" y="{top}" width="{x1 - x0}" height="{panel_h}" fill="none" stroke="#444444"/>')
        body.append(f'<text x="{x0}" y="{top - 8}" font-size="13" font-family="sans-serif">{escape(title)}</text>')
        body.append(f'<text x="{x0 - 6}" y="{top + 10}" font-size="10" text-anchor="end" '
                    f'font-family="sans-serif">{hi:.4g}</text>')
        body.append(f'<text x="{x0 - 6}" y="{top + panel_h}" font-size="10" text-anchor="end" '
                    f'font-family="sans-serif">{lo:.4g}</text>')
        for r_i, (s, st) in enumerate(zip(series, steps)):
            keep = _downsample(s.size, max_points)
            pts = " ".join(f"{_fmt(x0 + (st[k] / smax) * (x1 - x0))},"
                           f"{_fmt(top + panel_h - (s[k] - lo) / (hi - lo) * panel_h)}" for k in keep)
            body.append(f'<polyline class="run" points="{pts}" fill="none" '
                        f'stroke="{PALETTE[r_i % len(PALETTE)]}" stroke-width="1.2"/>')
        body.append("</g>")
    body.append('<g class="legend">')
    for r_i, lab in enumerate(labels):
        y = pad_t + 14 + 18 * r_i
        body.append(f'<line x1="{width - pad_r + 12}" y1="{y}" x2="{width - pad_r + 32}" y2="{y}" '
                    f'stroke="{PALETTE[r_i % len(PALETTE)]}" stroke-width="2"/>')
        body.append(f'<text class="legend-entry" x="{width - pad_r + 38}" y="{y + 4}" font-size="12" '
                    f'font-family="sans-serif">{escape(str(lab))}</text>')
    body.append("</g>")
    _write(out_path, _svg(width, height, body))


# ---------------------------------------------------------------------------
# reconstruction strips


def reconstruct_mean(params, x):
    """Decoder mean at the posterior mean."""
    post = encode(params, x)
    return decode(params, post.mu).value


def recon_strip(params, x, indices, out_path, kind="sine", reconstruct=None):
    """Input vs reconstruction for the given rows; waveforms or 28x28 grayscale images.

    ``reconstruct(x) -> xhat`` overrides the model (``params`` may then be None).
    """
    x = np.asarray(x, dtype=np.float64)
    indices = [int(i) for i in indices]
    for i in indices:
        if not 0 <= i < x.shape[0]:
            raise dc.UsageError(f"index {i} out of range for {x.shape[0]} rows")
    rows = x[indices]
    recon = reconstruct(rows) if reconstruct is not None else reconstruct_mean(params, rows)
    body = []
    if kind == "mnist":
        cell, side = 4, 28
        panel = cell * side + 12
        width, height = 2 * panel + 20, len(indices) * panel + 30
        body.append('<text x="10" y="18" font-size="12" font-family="sans-serif">input | reconstruction</text>')
        for r, (a, b) in enumerate(zip(rows, recon)):
            for c, img in enumerate((a, b)):
                ox, oy = 10 + c * panel, 26 + r * panel
                body.append(f'<g class="panel" transform="translate({ox},{oy})">')
                for p in range(side * side):
                    level = int(round(255 * (1.0 - min(max(img[p], 0.0), 1.0))))
                    body.append(f'<rect x="{(p % side) * cell}" y="{(p // side) * cell}" width="{cell}" '
                                f'height="{cell}" fill="rgb({level},{level},{level})"/>')
                body.append("</g>")
    else:
        pw, ph = 300, 80
        width, height = 2 * pw + 40, len(indices) * (ph + 10) + 30
        lim = max(1e-9, float(np.max(np.abs(np.concatenate([rows, recon])))))
        body.append('<text x="10" y="18" font-size="12" font-family="sans-serif">input | reconstruction</text>')
        for r, (a, b) in enumerate(zip(rows, recon)):
            for c, wave in enumerate((a, b)):
                ox, oy = 10 + c * (pw + 20), 26 + r * (ph + 10)
                pts = " ".join(f"{_fmt(ox + k * pw / (wave.size - 1))},{_fmt(oy + ph / 2 - wave[k] / lim * ph / 2)}"
                               for k in range(wave.size))
                body.append(f'<g class="panel"><rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" '
                            f'stroke="#bbbbbb"/><polyline points="{pts}" fill="none" '
                            f'stroke="{PALETTE[c]}" stroke-width="1"/></g>')
    _write(out_path, _svg(width, height, body))


def summary_markdown(header, rows):
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}" if math.isfinite(v) else str(v)
        return str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"
