import json
import os

import numpy as np
import pytest

from equilab.bench import cli, svgplot
from equilab.bench.config import default_config, load_config, resolve_config
from equilab.bench.experiments import (ARMS, list_arms, max_nondiverging_lr,
                                       run_experiment, scale_first_layer_rows)
from equilab.bench.manifest import atomic_write_text, load_manifest
from equilab.errors import ConfigError, DimensionError
from equilab.net import DenseSpec, Network


def read_all(out_dir):
    return {f: (out_dir / f).read_bytes() for f in os.listdir(out_dir)}


def rows_of(path):
    return path.read_bytes().decode("ascii").strip().split("\r\n")


class TestConfig:
    def test_default_and_hash_stability(self):
        a = default_config("vds", seed=3)
        b = default_config("vds", seed=3)
        assert a.config_hash == b.config_hash
        assert a["trials"] == 1000
        assert default_config("vds", seed=4).config_hash != a.config_hash
        assert default_config("vds", seed=3, size=8).config_hash != a.config_hash

    def test_unknown_kind_and_key(self):
        with pytest.raises(ConfigError):
            default_config("volume")
        with pytest.raises(ConfigError):
            default_config("vds", trails=10)

    def test_type_coercion_rejects_bool_and_strings(self):
        with pytest.raises(ConfigError):
            default_config("vds", trials=True)
        with pytest.raises(ConfigError):
            default_config("vds", trials="many")
        # int where float is wanted is fine
        assert default_config("quad", kappa=10)["kappa"] == 10.0

    def test_task_validation(self):
        with pytest.raises(ConfigError):
            default_config("train_compare", task="spirals")

    def test_unknown_arm_rejected_at_run_time(self, tmp_path):
        cfg = default_config("train_compare", arms=["none", "ablated"],
                             epochs=1, n_samples=16)
        with pytest.raises(ConfigError):
            run_experiment(cfg, tmp_path / "r")

    def test_load_config_roundtrip(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "vds", "seed": 2, "trials": 5, "size": 4}))
        cfg = load_config(p)
        assert cfg.kind == "vds" and cfg.seed == 2 and cfg["trials"] == 5
        assert load_config(p, seed=9).seed == 9
        with pytest.raises(ConfigError):
            load_config(p, kind="quad")

    def test_load_config_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_resolve_requires_kind(self):
        with pytest.raises(ConfigError):
            resolve_config({"seed": 0})


class TestSvgPlot:
    def test_nice_ticks_125_ladder(self):
        ticks = svgplot.nice_ticks(0.0, 10.0)
        assert ticks[0] <= 0.0 and ticks[-1] >= 10.0
        steps = np.diff(ticks)
        np.testing.assert_allclose(steps, steps[0])
        mant = steps[0] / 10.0 ** np.floor(np.log10(steps[0]))
        assert round(mant, 6) in (1.0, 2.0, 5.0)

    def test_emit_deterministic_and_escaped(self):
        s = [svgplot.LineSeries("a<b&c", [0, 1, 2], [1.0, 2.0, 3.0])]
        one = svgplot.emit_svg(s, title="t", xlabel="x", ylabel="y")
        two = svgplot.emit_svg(s, title="t", xlabel="x", ylabel="y")
        assert one == two
        assert one.startswith("<?xml") and one.rstrip().endswith("</svg>")
        assert "a&lt;b&amp;c" in one and "a<b" not in one

    def test_nonfinite_and_nonpositive_dropped(self):
        s = [svgplot.LineSeries("x", [0, 1, 2, 3],
                                [1.0, float("nan"), -5.0, 10.0])]
        out = svgplot.emit_svg(s, log_y=True)
        assert "<polyline" in out or "<circle" in out

    def test_empty_series_gives_frame(self):
        out = svgplot.emit_svg([])
        assert out.startswith("<?xml") and "</svg>" in out

    def test_writes_file(self, tmp_path):
        p = tmp_path / "plot.svg"
        out = svgplot.emit_svg([svgplot.LineSeries("x", [0, 1], [1, 2])],
                               path=p)
        assert p.read_text() == out

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            svgplot.LineSeries("x", [0, 1], [1.0])


class TestManifest:
    def test_atomic_write(self, tmp_path):
        p = tmp_path / "f.txt"
        atomic_write_text(p, "hello")
        assert p.read_text() == "hello"
        assert os.listdir(tmp_path) == ["f.txt"]  # no temp residue

    def test_roundtrip_via_run(self, tmp_path):
        cfg = default_config("vds", trials=3, size=4)
        out = tmp_path / "r"
        man = run_experiment(cfg, out)
        back = load_manifest(out)
        assert back["kind"] == "vds"
        assert back["config_hash"] == cfg.config_hash
        assert sorted(back["files"]) == back["files"]
        assert set(back["files"]) == set(os.listdir(out))
        assert man.wall_time_total > 0.0


class TestVds:
    def test_small_run_outputs(self, tmp_path):
        cfg = default_config("vds", trials=25, size=8, seed=1)
        out = tmp_path / "r"
        run_experiment(cfg, out)
        rows = rows_of(out / "vds_trials.csv")
        assert rows[0].startswith("trial,")
        summary = rows_of(out / "summary.csv")
        header = summary[0].split(",")
        vals = dict(zip(header, summary[1].split(",")))
        assert float(vals["fraction_relaxed"]) >= 0.99
        assert int(vals["trials"]) == 25

    def test_deterministic_bytes(self, tmp_path):
        cfg = default_config("vds", trials=10, size=6, seed=2)
        a, b = tmp_path / "a", tmp_path / "b"
        run_experiment(cfg, a)
        run_experiment(cfg, b)
        got_a, got_b = read_all(a), read_all(b)
        for name in got_a:
            if name == "manifest.json":
                continue  # timings differ by design
            assert got_a[name] == got_b[name], name


class TestQuad:
    def test_preconditioned_arms_beat_plain(self, tmp_path):
        cfg = default_config("quad", dim=16, kappa=1e4, iters=300, seed=0)
        out = tmp_path / "r"
        run_experiment(cfg, out)
        rows = rows_of(out / "summary.csv")
        header = rows[0].split(",")
        by_arm = {r.split(",")[0]: dict(zip(header, r.split(",")))
                  for r in rows[1:]}
        assert set(by_arm) == {"none", "row_equilibration", "jacobi"}
        for arm in ("row_equilibration", "jacobi"):
            assert float(by_arm[arm]["kappa"]) < float(by_arm["none"]["kappa"])
            assert float(by_arm[arm]["final_excess"]) < \
                float(by_arm["none"]["final_excess"])
        assert (out / "quad_excess.svg").exists()


class TestTrainCompare:
    def test_two_arm_smoke(self, tmp_path):
        cfg = default_config("train_compare", task="two_moons",
                             arms=["none", "e-reparam"], activation="relu",
                             n_samples=64, epochs=3, lr=0.1,
                             init_row_spread=10.0, noise=0.15, seed=0)
        out = tmp_path / "r"
        run_experiment(cfg, out)
        files = set(os.listdir(out))
        assert {"summary.csv", "train_loss.svg", "manifest.json",
                "train_none.csv", "train_e_reparam.csv"} <= files
        rows = rows_of(out / "summary.csv")
        assert rows[0].split(",")[0] == "arm"
        assert len(rows) == 3
        man = load_manifest(out)
        assert set(man["wall_time_per_step"]) == {"none", "e-reparam"}

    def test_lr_grid_emits_sweep(self, tmp_path):
        cfg = default_config("train_compare", arms=["none"], epochs=2,
                             n_samples=32, lr_grid=[0.01, 0.1], seed=0)
        out = tmp_path / "r"
        run_experiment(cfg, out)
        rows = rows_of(out / "lr_sweep.csv")
        assert rows[0] == "arm,max_nondiverging_lr"
        assert rows[1].split(",")[0] == "none"

    def test_max_nondiverging_lr_orders(self):
        cfg = default_config("train_compare", arms=["none"], epochs=2,
                             n_samples=32, seed=0)
        lr = max_nondiverging_lr(cfg, "none", [0.001, 1e9])
        assert lr == 0.001

    def test_scale_first_layer_rows(self):
        net = Network([DenseSpec(2, 6, activation="tanh"), DenseSpec(6, 1)],
                      seed=0)
        w0 = net.layers[0].w.copy()
        scale_first_layer_rows(net, seed=0, spread=1.0)
        np.testing.assert_array_equal(net.layers[0].w, w0)
        scale_first_layer_rows(net, seed=0, spread=50.0)
        ratio = np.linalg.norm(net.layers[0].w, axis=1) / \
            np.linalg.norm(w0, axis=1)
        assert ratio.max() / ratio.min() == pytest.approx(50.0, rel=1e-12)
        with pytest.raises(ConfigError):
            scale_first_layer_rows(net, seed=0, spread=0.5)

    def test_arm_registry(self):
        assert tuple(list_arms()) == tuple(ARMS)
        assert "e-reparam" in ARMS and "bn+ws" in ARMS


class TestHessianCompareRun:
    def test_tiny_run(self, tmp_path):
        cfg = default_config("hessian_compare", widths=[2, 3, 1],
                             n_samples=32, n_points=2, seed=0)
        out = tmp_path / "r"
        run_experiment(cfg, out)
        rows = rows_of(out / "kappa_comparisons.csv")
        assert rows[0] == "seed,phase,kappa_plain,kappa_eq,rank_ok_plain,rank_ok_eq"
        summary = rows_of(out / "summary.csv")
        vals = dict(zip(summary[0].split(","), summary[1].split(",")))
        assert int(vals["n_points"]) == 2


class TestCondReport:
    def test_matrix_file(self, tmp_path):
        mpath = tmp_path / "m.txt"
        mpath.write_text("2 2\n3 4\n0 5\n")
        cfg = default_config("cond_report")
        out = tmp_path / "r"
        run_experiment(cfg, out, matrix_file=str(mpath))
        text = (out / "cond_report.csv").read_text()
        assert "row_equilibration" in text


class TestCli:
    def test_list_arms(self, capsys):
        assert cli.main(["--list-arms"]) == 0
        out = capsys.readouterr().out
        for arm in ARMS:
            assert arm in out

    def test_no_command_exits_2(self, capsys):
        assert cli.main([]) == 2

    def test_vds_run_with_config(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "vds", "trials": 4, "size": 4}))
        out = tmp_path / "out"
        rc = cli.main(["vds", "--config", str(p), "--out", str(out)])
        assert rc == 0
        assert "wrote" in capsys.readouterr().out
        assert (out / "summary.csv").exists()

    def test_default_out_dir_uses_config_hash(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "vds", "trials": 3, "size": 4}))
        rc = cli.main(["vds", "--config", str(p), "--seed", "7"])
        assert rc == 0
        want = default_config("vds", seed=7, trials=3, size=4).config_hash
        assert (tmp_path / "runs" / f"vds_{want}" / "summary.csv").exists()

    def test_bad_config_exits_1(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "vds", "trails": 4}))
        rc = cli.main(["vds", "--config", str(p), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert capsys.readouterr().err.strip() != ""

    def test_cond_positional_matrix(self, tmp_path):
        mpath = tmp_path / "m.txt"
        mpath.write_text("2 2\n1 0\n0 2\n")
        out = tmp_path / "o"
        rc = cli.main(["cond", str(mpath), "--out", str(out)])
        assert rc == 0
        assert (out / "cond_report.csv").exists()
