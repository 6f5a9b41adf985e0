import csv
import re
import subprocess
import sys

import numpy as np
import pytest

from images import synthetic_rgb, to_u8
from wavemixsr.cli import main
from wavemixsr.imaging import load_png, save_png
from wavemixsr.model import ModelConfig, init_params
from wavemixsr.weights import dumps, load_weights, save_weights


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def tiny4x(tmp_path):
    path = tmp_path / "tiny4x.wmx2"
    save_weights(init_params(ModelConfig.build(scale=4, embed_dim=8, depth=1), 0), path)
    return path


@pytest.fixture
def hr_dir(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    for i, size in enumerate((48, 40)):
        save_png(to_u8(synthetic_rgb(size, seed=i)), d / f"img{i}.png")
    return d


class TestDegrade:
    @pytest.mark.parametrize("w,h", [(480, 320), (481, 321)])
    def test_sizes(self, tmp_path, capsys, w, h):
        src = tmp_path / "in.png"
        save_png(np.random.default_rng(0).integers(0, 256, (h, w, 3), dtype=np.uint8), src)
        code, out, _ = run(capsys, "degrade", "--input", src, "--scale", 4, "--output", tmp_path / "o.png")
        assert code == 0
        assert load_png(tmp_path / "o.png").shape == (80, 120, 3)
        assert "120x80" in out

    def test_constant(self, tmp_path, capsys):
        src = tmp_path / "c.png"
        save_png(np.full((20, 30, 3), (12, 200, 77), dtype=np.uint8), src)
        assert run(capsys, "degrade", "--input", src, "--scale", 2, "--output", tmp_path / "o.png")[0] == 0
        out = load_png(tmp_path / "o.png")
        assert out.shape == (10, 15, 3)
        assert np.all(out == np.array([12, 200, 77], dtype=np.uint8))

    def test_grayscale_stays_grayscale(self, tmp_path, capsys):
        src = tmp_path / "g.png"
        save_png(np.full((8, 8, 1), 90, dtype=np.uint8), src)
        assert run(capsys, "degrade", "--input", src, "--scale", 2, "--output", tmp_path / "o.png")[0] == 0
        assert load_png(tmp_path / "o.png").shape == (4, 4, 1)

    def test_bad_scale(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as e:
            main(["degrade", "--input", "x.png", "--scale", "3", "--output", "y.png"])
        assert e.value.code == 1

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(capsys, "degrade", "--input", tmp_path / "nope.png", "--scale", 2, "--output", tmp_path / "o.png")
        assert code == 2 and "no such file" in err


class TestUpscale:
    def test_64_to_256(self, tmp_path, capsys, tiny4x):
        src = tmp_path / "in.png"
        save_png(to_u8(synthetic_rgb(64)), src)
        code, out, _ = run(capsys, "upscale", "--input", src, "--weights", tiny4x, "--output", tmp_path / "o.png")
        assert code == 0
        img = load_png(tmp_path / "o.png")
        assert img.shape == (256, 256, 3) and img.dtype == np.uint8
        assert "256x256" in out

    def test_grayscale_promoted(self, tmp_path, capsys, tiny4x):
        src = tmp_path / "g.png"
        save_png(np.random.default_rng(0).integers(0, 256, (9, 7, 1), dtype=np.uint8), src)
        assert run(capsys, "upscale", "--input", src, "--weights", tiny4x, "--output", tmp_path / "o.png")[0] == 0
        assert load_png(tmp_path / "o.png").shape == (36, 28, 3)

    def test_bad_weights(self, tmp_path, capsys):
        src = tmp_path / "in.png"
        save_png(np.zeros((4, 4, 3), dtype=np.uint8), src)
        (tmp_path / "bad.wmx2").write_bytes(b"JUNKJUNKJUNK")
        code, _, err = run(capsys, "upscale", "--input", src, "--weights", tmp_path / "bad.wmx2", "--output", tmp_path / "o.png")
        assert code == 3 and "magic" in err
        assert not (tmp_path / "o.png").exists()


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestEval:
    def test_baseline(self, tmp_path, capsys, hr_dir):
        report = tmp_path / "r.csv"
        code, out, _ = run(capsys, "eval", "--hr-dir", hr_dir, "--baseline", "--scale", 2, "--report", report)
        assert code == 0
        rows = read_rows(report)
        assert len(rows) == 2 + 1 and rows[-1]["image"] == "mean"
        vals = [float(r["psnr_db"]) for r in rows]
        assert all(np.isfinite(vals)) and vals[-1] == pytest.approx(np.mean(vals[:2]), abs=1e-5)
        assert report.with_suffix(".png").stat().st_size > 0

    def test_singleton_mean(self, tmp_path, capsys, hr_dir):
        (hr_dir / "img1.png").unlink()
        run(capsys, "eval", "--hr-dir", hr_dir, "--baseline", "--report", tmp_path / "r.csv", "--no-plot")
        rows = read_rows(tmp_path / "r.csv")
        assert len(rows) == 2
        assert rows[0]["psnr_db"] == rows[1]["psnr_db"] and rows[0]["ssim"] == rows[1]["ssim"]
        assert not (tmp_path / "r.png").exists()

    def test_with_model_and_jobs(self, tmp_path, capsys, hr_dir, tiny4x):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(capsys, "eval", "--hr-dir", hr_dir, "--weights", tiny4x, "--report", a, "--no-plot")[0] == 0
        code, out, _ = run(capsys, "eval", "--hr-dir", hr_dir, "--weights", tiny4x, "--report", b, "--jobs", 2, "--no-plot")
        assert code == 0 and "bicubic mean" in out
        assert a.read_text() == b.read_text()

    def test_unreadable_skipped(self, tmp_path, capsys, hr_dir):
        (hr_dir / "broken.png").write_bytes(b"not a png")
        code, out, _ = run(capsys, "eval", "--hr-dir", hr_dir, "--baseline", "--report", tmp_path / "r.csv", "--no-plot")
        assert code == 0
        assert "skipped: 1" in out
        assert len(read_rows(tmp_path / "r.csv")) == 3

    def test_lr_dir(self, tmp_path, capsys, hr_dir):
        lr_dir = tmp_path / "lr"
        lr_dir.mkdir()
        for p in hr_dir.iterdir():
            run(capsys, "degrade", "--input", p, "--scale", 2, "--output", lr_dir / p.name)
        run(capsys, "eval", "--hr-dir", hr_dir, "--baseline", "--report", tmp_path / "a.csv", "--no-plot")
        run(capsys, "eval", "--hr-dir", hr_dir, "--baseline", "--lr-dir", lr_dir, "--report", tmp_path / "b.csv", "--no-plot")
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_needs_source(self, tmp_path, capsys, hr_dir):
        assert run(capsys, "eval", "--hr-dir", hr_dir, "--report", tmp_path / "r.csv")[0] == 1

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "e").mkdir()
        assert run(capsys, "eval", "--hr-dir", tmp_path / "e", "--baseline", "--report", tmp_path / "r.csv")[0] == 2


def train_args(data, out, *extra):
    return ["train", "--data-dir", data, "--out", out, "--embed-dim", 8, "--depth", 1, "--patch", 8, *extra]


class TestTrain:
    def test_zero_steps_is_init(self, tmp_path, capsys, hr_dir):
        code, out, _ = run(capsys, *train_args(hr_dir, tmp_path / "w", "--steps", 0, "--seed", 5))
        assert code == 0
        fresh = init_params(ModelConfig.build(scale=2, embed_dim=8, depth=1), 5)
        assert (tmp_path / "w").read_bytes() == dumps(fresh)
        assert "parameters:" in out

    def test_same_seed_same_bytes(self, tmp_path, capsys, hr_dir):
        for name in ("a", "b"):
            assert run(capsys, *train_args(hr_dir, tmp_path / name, "--steps", 3, "--switch-step", 2))[0] == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        run(capsys, *train_args(hr_dir, tmp_path / "c", "--steps", 3, "--seed", 1))
        assert (tmp_path / "c").read_bytes() != (tmp_path / "a").read_bytes()

    def test_reports(self, tmp_path, capsys, hr_dir):
        code, out, _ = run(capsys, *train_args(hr_dir, tmp_path / "w", "--steps", 4, "--loss-csv", tmp_path / "loss.csv"))
        assert code == 0
        assert re.search(r"final loss: \d+\.\d+", out)
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss" and len(lines) == 5
        assert (tmp_path / "loss.png").stat().st_size > 0
        assert re.search(r"img0.png: model [\d.]+ dB / [\d.]+   bicubic [\d.]+ dB", out)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_writes_nothing(self, tmp_path, capsys, hr_dir):
        code, _, err = run(capsys, *train_args(hr_dir, tmp_path / "w", "--steps", 5, "--lr", "inf"))
        assert code == 4 and "step" in err
        assert not (tmp_path / "w").exists()
        assert list(tmp_path.glob("w*.part")) == []

    def test_bad_plan(self, tmp_path, capsys, hr_dir):
        assert run(capsys, *train_args(hr_dir, tmp_path / "w", "--steps", 2, "--switch-step", 3))[0] == 1

    def test_upscale_matches_training_eval(self, tmp_path, capsys, hr_dir):
        from wavemixsr.imaging import image_to_tensor, tensor_to_image
        from wavemixsr.pipeline import upscale_rgb

        run(capsys, *train_args(hr_dir, tmp_path / "w", "--steps", 2))
        src = hr_dir / "img1.png"
        run(capsys, "upscale", "--input", src, "--weights", tmp_path / "w", "--output", tmp_path / "o.png")
        want = tensor_to_image(upscale_rgb(load_weights(tmp_path / "w"), image_to_tensor(load_png(src))))
        np.testing.assert_array_equal(load_png(tmp_path / "o.png"), want)

    def test_overfit_beats_bicubic(self, tmp_path, capsys):
        data = tmp_path / "one"
        data.mkdir()
        save_png(to_u8(synthetic_rgb(128)[:, :, 32:96, 32:96]), data / "patch.png")
        code, out, _ = run(
            capsys, "train", "--data-dir", data, "--out", tmp_path / "w", "--steps", 200,
            "--embed-dim", 32, "--depth", 2, "--patch", 32, "--no-plot",
        )
        assert code == 0
        m = re.search(r"model ([\d.]+) dB .* bicubic ([\d.]+) dB", out)
        assert float(m.group(1)) > float(m.group(2))


class TestBench:
    CFG = "scale=2,embed_dim=16,depth=1"

    def bench(self, capsys, tmp_path, *extra):
        report = tmp_path / "b.csv"
        code, out, _ = run(capsys, "bench", "--config", self.CFG, "--report", report, *extra)
        assert code == 0
        (row,) = read_rows(report)
        return {k: float(v) for k, v in row.items()}, out

    def test_throughput_consistent(self, capsys, tmp_path):
        row, out = self.bench(capsys, tmp_path, "--iters", 5)
        assert abs(row["throughput_fps"] * row["latency_ms"] - 1000) < 200
        assert "latency_ms" in out and "median_ms" in out
        assert (tmp_path / "b.png").stat().st_size > 0

    def test_larger_input_slower(self, capsys, tmp_path):
        small, _ = self.bench(capsys, tmp_path, "--size", 64, "--iters", 5, "--no-plot")
        large, _ = self.bench(capsys, tmp_path, "--size", 128, "--iters", 5, "--no-plot")
        assert large["latency_ms"] > small["latency_ms"]

    def test_steady_state(self, capsys, tmp_path):
        a, _ = self.bench(capsys, tmp_path, "--iters", 20, "--warmup", 10, "--no-plot")
        b, _ = self.bench(capsys, tmp_path, "--iters", 40, "--warmup", 10, "--no-plot")
        assert abs(b["latency_ms"] - a["latency_ms"]) / a["latency_ms"] < 0.10

    def test_from_weights(self, capsys, tmp_path, tiny4x):
        code, out, _ = run(capsys, "bench", "--weights", tiny4x, "--iters", 1, "--warmup", 0, "--size", 16)
        assert code == 0 and "input_size" in out

    def test_bad_iters(self, capsys):
        assert run(capsys, "bench", "--config", self.CFG, "--iters", 0)[0] == 1


class TestInspect:
    def test_default_4x(self, capsys):
        code, out, _ = run(capsys, "inspect", "--config", "scale=4")
        assert code == 0
        n = int(re.search(r"parameters: (\d+)", out).group(1))
        assert 0.4e6 <= n <= 1.0e6 and "outside" not in out
        assert "ratio to 25.6 G" in out

    def test_flags_out_of_budget(self, capsys):
        out = run(capsys, "inspect", "--config", "scale=2,embed_dim=16")[1]
        assert "outside 0.4M-1.0M budget" in out

    def test_stage_counts(self, capsys):
        stages = {}
        for s in (2, 4):
            out = run(capsys, "inspect", "--config", f"scale={s}")[1]
            stages[s] = int(re.search(r"^stages: (\d+)", out, re.M).group(1))
        assert stages[2] * 2 == stages[4]

    def test_layers_and_weights(self, capsys, tiny4x):
        out = run(capsys, "inspect", "--weights", tiny4x, "--layers")[1]
        assert "stage1.block0.bn.running_var" in out and "scale 4x" in out

    def test_bad_config_key(self, capsys):
        code, _, err = run(capsys, "inspect", "--config", "width=3")
        assert code == 1 and "unknown config key" in err


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert out.strip().endswith("gradcheck: PASS")
    assert out.count("PASS ") >= 20


def test_usage_errors(capsys):
    for argv in ([], ["frobnicate"], ["upscale", "--input", "x"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 1


def test_threads_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("WMX2_THREADS", "1")
    assert run(capsys, "inspect", "--config", "scale=2")[0] == 0
    monkeypatch.setenv("WMX2_THREADS", "junk")
    assert run(capsys, "inspect", "--config", "scale=2")[0] == 0


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "wavemixsr.cli", "inspect", "--config", "scale=2"], capture_output=True, text=True)
    assert res.returncode == 0 and "parameters:" in res.stdout
