import csv
import json

import numpy as np
import pytest

from patchroute import cli
from patchroute.dataset import Scene, SceneDataset, save_annotations
from patchroute.gainmap import GainMap, read_gainmap, write_gainmap
from patchroute.geometry import BBox, GridSpec, ImageExtent
from patchroute.synthetic import ClusterParams, clustered_dataset


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def coco(tmp_path):
    ds = clustered_dataset(5, 3, ClusterParams(image_size=2048, clusters_mean=3, boxes_per_cluster_mean=15, scatter_px=80))
    ds.scenes.append(Scene("blank", ImageExtent(1024, 1024)))
    path = tmp_path / "ann.json"
    save_annotations(ds, path)
    return path


def separated_dataset():
    """Clusters of 9, 6 and 3 boxes, each a 232 px diagonal centred on a 64 px grid cell.

    With 256 px patches every cluster fits exactly one cell's patch, so each
    one produces a single clean gain-map peak.
    """
    centers = [(608, 608), (1440, 736), (992, 1504)]
    scenes = []
    for i in range(3):
        boxes = []
        for n, (cx, cy) in enumerate(centers):
            m = 9 - 3 * n
            for j in range(m):
                off = -116 + 224 * j / (m - 1)
                x, y = cx + 64 * i + off, cy + off
                boxes.append(BBox(x, y, x + 8, y + 8, 0, 10 * n + j))
        scenes.append(Scene(i, ImageExtent(2048, 2048), boxes))
    return SceneDataset(scenes)


class TestConfig:
    def test_defaults(self):
        cfg = cli.build_config()
        assert (cfg.patch_size, cfg.budget, cfg.bins, cfg.margin, cfg.iof_threshold, cfg.tile_target, cfg.grid_stride) == (
            512, 40, 6, 0.05, 0.5, 8192, 64.0,
        )

    def test_file_then_flags(self, tmp_path):
        p = tmp_path / "run.conf"
        p.write_text("# comment\n[routing]\nbudget = 5\nstrategy = \"rigid-nms\"\niof-threshold = 0.7  # trailing\n")
        cfg = cli.build_config(cli.parse_config_file(p), {"budget": 7})
        assert (cfg.budget, cfg.strategy, cfg.iof_threshold) == (7, "rigid-nms", 0.7)

    @pytest.mark.parametrize(
        "text", ["nonsense = 1\n", "budget = many\n", "budget 5\n", "strategy = best\n", "patch_size = -3\n", "plots = maybe\n"]
    )
    def test_bad_config_exit_2(self, tmp_path, text, capsys):
        p = tmp_path / "bad.conf"
        p.write_text(text)
        assert run("--config", p, "oracle", "--trials", 1) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert run("oracle", "--config", tmp_path / "none.conf") == 2


class TestOracle:
    def test_passes(self, capsys):
        assert run("oracle", "--trials", 100, "--seed", 4) == 0
        assert "PASS 100/100" in capsys.readouterr().out

    def test_violation_exit_1(self, monkeypatch):
        monkeypatch.setattr(cli, "brute_force_optimal", lambda inst, c: (10**6, ()))
        assert run("oracle", "--trials", 3) == 1

    def test_no_color(self, monkeypatch):
        class Tty:
            def isatty(self):
                return True

        monkeypatch.setattr(cli.sys, "stdout", Tty())
        monkeypatch.delenv("NO_COLOR", raising=False)
        assert "\033[" in cli._status(True)
        monkeypatch.setenv("NO_COLOR", "1")
        assert cli._status(True) == "PASS"


class TestGainmap:
    def test_one_file_per_image_and_verify(self, coco, tmp_path, capsys):
        out = tmp_path / "o"
        assert run("gainmap", coco, "--out-dir", out, "--verify", "--jobs", 1, "--patch-size", 256) == 0
        files = sorted((out / "gainmaps").iterdir())
        assert len(files) == 4
        blank = read_gainmap(out / "gainmaps" / "blank.txt")
        assert blank.values.shape == (16, 16) and not blank.values.any()
        assert "PASS verify" in capsys.readouterr().out

    def test_verify_mismatch_exit_1(self, coco, tmp_path, monkeypatch):
        real = cli.build_gt_gainmap

        def off(*a):
            g = real(*a)
            return GainMap(g.grid, g.values + 1e-3)

        monkeypatch.setattr(cli, "build_gt_gainmap", off)
        assert run("gainmap", coco, "--out-dir", tmp_path, "--verify", "--jobs", 1, "--patch-size", 256) == 1

    def test_patch_too_big_exit_2(self, coco, tmp_path):
        assert run("gainmap", coco, "--out-dir", tmp_path, "--patch-size", 4096) == 2

    def test_missing_annotations_exit_2(self, tmp_path, capsys):
        assert run("gainmap", tmp_path / "missing.json", "--out-dir", tmp_path) == 2
        assert "not found" in capsys.readouterr().err


class TestRoute:
    def test_default_forty_rows(self, tmp_path):
        rng = np.random.default_rng(0)
        paths = []
        for i in range(2):
            p = tmp_path / f"m{i}.txt"
            write_gainmap(p, GainMap(GridSpec(128, 128, ImageExtent(8192, 8192)), rng.uniform(0, 5, (128, 128))))
            paths.append(p)
        out = tmp_path / "o"
        assert run("route", *paths, "--out-dir", out) == 0
        for i in range(2):
            assert len(rows(out / "selections" / f"m{i}.csv")) == 41
        summary = rows(out / "route_summary.csv")
        assert summary[0] == ["file", "K", "strategy", "runtime_s", "query_budget"]
        assert [r[1:3] for r in summary[1:]] == [["40", "issga-linear"]] * 2

    def test_k1_global_max(self, tmp_path):
        v = np.zeros((16, 16))
        v[9, 4] = 7.5
        write_gainmap(tmp_path / "m.txt", GainMap(GridSpec(16, 16, ImageExtent(1024, 1024)), v))
        assert run("route", tmp_path / "m.txt", "--out-dir", tmp_path, "--budget", 1) == 0
        r = rows(tmp_path / "selections" / "m.csv")
        assert r[1][:4] == ["1", "4", "9", "7.5"]

    def test_hand_trace(self, tmp_path):
        # 3 x 1 grid, 32 px cells, 64 px patch spans two cells
        write_gainmap(tmp_path / "m.txt", GainMap(GridSpec(3, 1, ImageExtent(96, 64)), [[4.0, 3.0, 0.0]]))
        assert run("route", tmp_path / "m.txt", "--out-dir", tmp_path, "-K", 2, "--patch-size", 64) == 0
        r = rows(tmp_path / "selections" / "m.csv")
        assert [x[:4] for x in r[1:]] == [["1", "0", "0", "4"], ["2", "1", "0", "1"]]

    def test_config_errors(self, tmp_path):
        write_gainmap(tmp_path / "m.txt", GainMap(GridSpec(4, 4, ImageExtent(256, 256)), np.ones((4, 4))))
        m = tmp_path / "m.txt"
        assert run("route", m, "--out-dir", tmp_path, "--strategy", "exact-greedy") == 2
        assert run("route", m, "--out-dir", tmp_path) == 2  # 512 px patch on a 256 px image
        assert run("route", m, "--out-dir", tmp_path, "--patch-size", 64, "-K", 17) == 2

    def test_malformed_map_exit_2(self, tmp_path):
        (tmp_path / "bad.txt").write_text("3 1 96\n1 2 3\n")
        assert run("route", tmp_path / "bad.txt", "--out-dir", tmp_path) == 2


SMALL = ["--scenes", 4, "--k-max", 12, "--budget", 10, "--patch-size", 256, "--jobs", 1]


class TestCompare:
    def test_outputs(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text("image_size = 2048\nclusters_mean = 3\nboxes_per_cluster_mean = 20\npatch_sweep = 128:20,256:10\n")
        out = tmp_path / "o"
        assert run("compare", "--config", conf, "--out-dir", out, *SMALL) == 0
        names = {p.name for p in out.iterdir()}
        for s in ("issga-linear", "issga-gaussian", "rigid-nms", "exact-greedy"):
            assert {f"curve_{s}.csv", f"marginal_{s}.csv", f"cdf_{s}.csv"} <= names
        assert {"summary.csv", "patch_sweep.csv", "meta.json", "coverage_vs_k.svg"} <= names
        assert rows(out / "curve_issga-linear.csv")[0] == ["K", "avg_rate"]
        assert rows(out / "marginal_rigid-nms.csv")[0] == ["rank", "marginal"]
        assert rows(out / "cdf_exact-greedy.csv")[0] == ["rate_bin", "count", "cum_fraction"]
        assert len(rows(out / "patch_sweep.csv")) == 1 + 2 * 4
        meta = json.loads((out / "meta.json").read_text())
        assert meta["iof_threshold"] == 0.5 and meta["grid_stride_px"] == 64.0
        for s in ("issga-linear", "rigid-nms", "exact-greedy"):
            rates = [float(r[1]) for r in rows(out / f"curve_{s}.csv")[1:]]
            assert rates == sorted(rates)
        assert "object coverage at K=10" in capsys.readouterr().out

    def test_well_separated_all_equal(self, tmp_path):
        save_annotations(separated_dataset(), tmp_path / "sep.json")
        out = tmp_path / "o"
        args = ["--out-dir", out, "--k-max", 3, "--budget", 3, "--patch-size", 256, "--jobs", 1, "--no-plots"]
        conf = tmp_path / "c.conf"
        conf.write_text("patch_sweep =\nsummary_ks = 1,2,3\n")
        assert run("compare", tmp_path / "sep.json", "--config", conf, *args) == 0
        ref = (out / "curve_exact-greedy.csv").read_bytes()
        for s in ("issga-linear", "issga-gaussian", "rigid-nms"):
            assert (out / f"curve_{s}.csv").read_bytes() == ref
        assert [r[1] for r in rows(out / "curve_issga-linear.csv")[1:]] == ["0.5000000000", "0.8333333333", "1.0000000000"]


def test_determinism(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("image_size = 2048\nclusters_mean = 3\nboxes_per_cluster_mean = 20\npatch_sweep = 256:10\n")
    for name in ("a", "b"):
        assert run("compare", "--config", conf, "--out-dir", tmp_path / name, "--seed", 3, *SMALL) == 0
    a = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert a == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in a:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_curve_synthetic_exact_greedy(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("image_size = 2048\nclusters_mean = 3\nboxes_per_cluster_mean = 20\n")
    out = tmp_path / "o"
    assert run("curve", "--config", conf, "--strategy", "exact-greedy", "--out-dir", out, *SMALL) == 0
    marg = [float(r[1]) for r in rows(out / "marginal_exact-greedy.csv")[1:]]
    assert len(marg) == 12 and all(x >= 0 for x in marg)
    assert json.loads((out / "curve_exact-greedy.meta.json").read_text())["source"] == "synthetic"


def test_curve_writes_table(coco, tmp_path):
    out = tmp_path / "o"
    assert run("curve", coco, "--strategy", "rigid-nms", "--out-dir", out, "--k-max", 5, "--patch-size", 256, "--jobs", 1) == 0
    r = rows(out / "curve_rigid-nms.csv")
    assert r[0] == ["K", "avg_rate"] and len(r) == 6


def test_tile(tmp_path):
    ds = SceneDataset([Scene(1, ImageExtent(9000, 8000), [BBox(8180, 90, 8220, 110, 0, 0), BBox(5, 5, 9, 9, 0, 1)])])
    save_annotations(ds, tmp_path / "a.json")
    assert run("tile", tmp_path / "a.json", "--out-dir", tmp_path / "o") == 0
    doc = json.loads((tmp_path / "o" / "tiled.json").read_text())
    assert [im["id"] for im in doc["images"]] == ["1_r0_c0", "1_r0_c1"]
    assert all(im["width"] == im["height"] == 8192 for im in doc["images"])
    moved = [a for a in doc["annotations"] if a["image_id"] == "1_r0_c1"]
    assert moved[0]["bbox"] == [0.0, 90.0, 28.0, 20.0]


def test_flags_before_command(tmp_path, capsys):
    assert run("--seed", 2, "oracle", "--trials", 5) == 0
    assert "(seed 2)" in capsys.readouterr().out
