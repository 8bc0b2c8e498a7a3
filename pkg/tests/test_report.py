import xml.etree.ElementTree as ET

import numpy as np
import pytest

from wiseale import diff_core as dc
from wiseale.model import Architecture, BERNOULLI, init_params, zero_params
from wiseale.report import (FormatError, embed_scatter, read_metrics_csv, read_table, recon_strip, training_curves,
                            write_table)
from wiseale.trainer import METRICS_HEADER, MetricsRecord, append_metrics, write_metrics_header

SVG = "{http://www.w3.org/2000/svg}"
ARCH2 = Architecture(d_x=6, d_z=2, enc_hidden=(4,))


def write_run(path, values):
    write_metrics_header(path)
    append_metrics(path, [MetricsRecord(0, i, v, 1.0, v - 1.0, 0.5, v - 0.5, 1.25, 0) for i, v in enumerate(values)])
    return str(path)


def polylines(path, panel):
    root = ET.parse(path).getroot()
    group = [g for g in root.iter(SVG + "g") if g.get("id") == f"panel-{panel}"][0]
    return [p.get("points").split() for p in group.iter(SVG + "polyline")]


# ---------------------------------------------------------------------------
# embed


def test_zero_model_ellipses_at_origin(tmp_path):
    x = np.random.default_rng(0).normal(size=(100, 6))
    out = tmp_path / "e.svg"
    csv_path = embed_scatter(zero_params(ARCH2), x, str(out), labels=np.arange(100) % 10, n_points=64)
    header, rows = read_table(csv_path)
    assert header == ["mu1", "mu2", "sigma1", "sigma2", "label"]
    assert len(rows) == 64
    assert all(r[:4] == [0.0, 0.0, 1.0, 1.0] for r in rows)
    root = ET.parse(out).getroot()
    assert len(list(root.iter(SVG + "ellipse"))) == 64
    assert len(list(root.iter(SVG + "circle"))) == 1


def test_embed_requires_two_latents(tmp_path):
    with pytest.raises(dc.UsageError, match="latent-dim 2"):
        embed_scatter(zero_params(Architecture(d_x=6, d_z=3)), np.zeros((5, 6)), str(tmp_path / "e.svg"))


def test_embed_deterministic(tmp_path):
    params = init_params(ARCH2, 1)
    x = np.random.default_rng(1).normal(size=(80, 6))
    embed_scatter(params, x, str(tmp_path / "a.svg"), seed=3)
    embed_scatter(params, x, str(tmp_path / "b.svg"), seed=3)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_table_round_trip(tmp_path):
    rows = [[0.1, 1e-300, -3.0000000000000004, "x"], [np.float64(2.5), 7, 0.0, "label"]]
    write_table(str(tmp_path / "t.csv"), ["a", "b", "c", "d"], rows)
    header, back = read_table(str(tmp_path / "t.csv"))
    assert header == ["a", "b", "c", "d"]
    assert back == [[0.1, 1e-300, -3.0000000000000004, "x"], [2.5, 7.0, 0.0, "label"]]


# ---------------------------------------------------------------------------
# curves


def test_constant_run_gives_horizontal_lines(tmp_path):
    path = write_run(tmp_path / "m.csv", [4.0] * 5)
    training_curves([path], str(tmp_path / "c.svg"))
    for panel in ("recon_term", "aevb_kl", "elbo_proxy"):
        (pts,) = polylines(tmp_path / "c.svg", panel)
        assert len(pts) == 5
        assert len({p.split(",")[1] for p in pts}) == 1


def test_two_runs_two_legend_entries(tmp_path):
    a = write_run(tmp_path / "a.csv", [1.0, 2.0, 3.0])
    b = write_run(tmp_path / "b.csv", [3.0, 1.0, 0.0])
    training_curves([a, b], str(tmp_path / "c.svg"), labels=["wise-ale", "aevb"])
    root = ET.parse(tmp_path / "c.svg").getroot()
    entries = [t.text for t in root.iter(SVG + "text") if t.get("class") == "legend-entry"]
    assert entries == ["wise-ale", "aevb"]
    assert [len(p) for p in polylines(tmp_path / "c.svg", "elbo_proxy")] == [3, 3]


def test_downsampled_vertex_count(tmp_path):
    path = write_run(tmp_path / "m.csv", list(np.linspace(0, 1, 100)))
    training_curves([path], str(tmp_path / "c.svg"), max_points=10)
    assert [len(p) for p in polylines(tmp_path / "c.svg", "aevb_kl")] == [10]


def test_metrics_reader_values_exact(tmp_path):
    vals = [0.1, 1 / 3, -2e-17]
    cols = read_metrics_csv(write_run(tmp_path / "m.csv", vals))
    assert cols["recon_term"].tolist() == vals
    assert cols["step"].tolist() == [0, 1, 2]


def test_malformed_metrics_line_number(tmp_path):
    path = write_run(tmp_path / "m.csv", [1.0, 2.0])
    with open(path, "a") as f:
        f.write("1,2,3\n")
    with pytest.raises(FormatError, match=":4:"):
        read_metrics_csv(path)
    (tmp_path / "h.csv").write_text("a,b\n")
    with pytest.raises(FormatError, match=":1:"):
        read_metrics_csv(str(tmp_path / "h.csv"))
    with pytest.raises(dc.UsageError):
        training_curves([], str(tmp_path / "c.svg"))


def test_metrics_header_matches_trainer():
    assert METRICS_HEADER == ["epoch", "step", "recon_term", "prior_term", "objective", "aevb_kl", "elbo_proxy",
                              "wall_ms", "clamp_count"]


# ---------------------------------------------------------------------------
# recon strips


def test_perfect_copy_panels_identical(tmp_path):
    x = np.random.default_rng(2).normal(size=(5, 256))
    recon_strip(None, x, [0, 3], str(tmp_path / "r.svg"), kind="sine", reconstruct=lambda rows: rows.copy())
    root = ET.parse(tmp_path / "r.svg").getroot()
    panels = [g for g in root.iter(SVG + "g") if g.get("class") == "panel"]
    assert len(panels) == 4
    shapes = [[p.get("points") for p in g.iter(SVG + "polyline")][0].split() for g in panels]
    for a, b in ((shapes[0], shapes[1]), (shapes[2], shapes[3])):
        assert [pt.split(",")[1] for pt in a] == [pt.split(",")[1] for pt in b]


def test_mnist_panel_count_and_determinism(tmp_path):
    arch = Architecture(d_x=784, d_z=2, enc_hidden=(4,), likelihood=BERNOULLI)
    params = init_params(arch, 0)
    x = (np.random.default_rng(3).uniform(size=(6, 784)) > 0.5).astype(float)
    recon_strip(params, x, [1, 2, 5], str(tmp_path / "a.svg"), kind="mnist")
    recon_strip(params, x, [1, 2, 5], str(tmp_path / "b.svg"), kind="mnist")
    root = ET.parse(tmp_path / "a.svg").getroot()
    panels = [g for g in root.iter(SVG + "g") if g.get("class") == "panel"]
    assert len(panels) == 6
    assert all(len(list(g.iter(SVG + "rect"))) == 784 for g in panels)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_recon_index_out_of_range(tmp_path):
    with pytest.raises(dc.UsageError):
        recon_strip(zero_params(ARCH2), np.zeros((3, 6)), [3], str(tmp_path / "r.svg"))
