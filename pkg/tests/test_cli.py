import csv
import io
import json

import pytest

from bora.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def drop_wall(text):
    rows = list(csv.reader(io.StringIO(text)))
    idx = rows[0].index("wall_ms")
    return [row[:idx] + row[idx + 1 :] for row in rows]


def counts(stdout):
    return dict(line.split(None, 1) for line in stdout.strip().splitlines())


class TestCount:
    @pytest.mark.parametrize("variant, b, total", [("lora", 1, "294912"), ("bora", 8, "307200"), ("bora", 16, "344064")])
    def test_table_totals(self, capsys, variant, b, total):
        code, out, _ = run(capsys, "count", "--m", 768, "--n", 768, "--r", 8, "--variant", variant, "--b", b, "--adapters", 24)
        assert code == 0 and counts(out)["total_params"] == total

    def test_single_block_difference(self, capsys):
        base = ("count", "--m", 768, "--n", 768, "--r", 8, "--adapters", 24, "--b", 1)
        bora = int(counts(run(capsys, *base, "--variant", "bora")[1])["total_params"])
        lora = int(counts(run(capsys, *base, "--variant", "lora")[1])["total_params"])
        assert bora - lora == 8 * 24

    def test_invalid_geometry(self, capsys):
        code, _, err = run(capsys, "count", "--m", 8, "--n", 8, "--r", 9)
        assert code == 2 and "r=9" in err

    def test_missing_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["count", "--m", "8"])
        assert info.value.code == 2


TRAIN = ("train", "--m", 16, "--n", 16, "--r", 2, "--b", 2, "--target-rank", 4, "--steps", 10, "--lr", 0.01)


class TestTrain:
    def test_outputs(self, capsys, tmp_path):
        code, _, _ = run(capsys, *TRAIN, "--variant", "lora", "--out-dir", tmp_path)
        assert code == 0
        lines = (tmp_path / "losses.csv").read_text().splitlines()
        assert lines[0] == "step,lr,loss,wall_ms" and len(lines) == 11
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["variant"] == "lora" and report["steps"] == 10
        assert (tmp_path / "checkpoint.bin").exists()

    def test_rerun_identical(self, capsys, tmp_path):
        for name in ("a", "b"):
            assert run(capsys, *TRAIN, "--seed", 3, "--out-dir", tmp_path / name)[0] == 0
        first = (tmp_path / "a" / "losses.csv").read_text()
        second = (tmp_path / "b" / "losses.csv").read_text()
        assert drop_wall(first) == drop_wall(second)

    def test_ablation_traces_distinct(self, capsys, tmp_path):
        traces = []
        for mode in ("norm-exp", "exp-only", "norm-only", "raw"):
            run(capsys, *TRAIN, "--sigma-transform", mode, "--out-dir", tmp_path / mode)
            traces.append(tuple(map(tuple, drop_wall((tmp_path / mode / "losses.csv").read_text())[2:])))
        assert len(set(traces)) == 4

    def test_config_file_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[adapter]\nvariant = bora\nm = 8\nn = 8\nr = 2\nb = 2\n"
                       "[task]\ntarget_rank = 2\n[train]\nsteps = 4\n")
        code, _, _ = run(capsys, "train", "--config", cfg, "--steps", 6, "--out-dir", tmp_path / "o")
        assert code == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert (report["m"], report["steps"]) == (8, 6)

    def test_missing_config(self, capsys, tmp_path):
        assert run(capsys, "train", "--config", tmp_path / "nope.ini")[0] == 4

    def test_malformed_config(self, capsys, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[adapter]\nm = 8\n[adapter]\nm = 9\n")
        code, _, err = run(capsys, "train", "--config", cfg)
        assert code == 4 and "cannot parse" in err

    def test_divergence_reports_step(self, capsys, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[adapter]\nm = 8\nn = 8\nr = 2\nb = 2\n[task]\ntarget_rank = 2\ngap_scale = 1e200\n")
        code, _, err = run(capsys, "train", "--config", cfg, "--steps", 3, "--out-dir", tmp_path / "o")
        assert code == 3 and "step 0" in err


class TestAnalyze:
    def _checkpoint(self, capsys, tmp_path, steps, *extra):
        run(capsys, "train", "--m", 16, "--n", 16, "--r", 8, "--b", 4, "--target-rank", 16,
            "--steps", steps, "--lr", 0.01, "--out-dir", tmp_path, *extra)
        return tmp_path / "checkpoint.bin"

    def test_fresh_checkpoint(self, capsys, tmp_path):
        ckpt = self._checkpoint(capsys, tmp_path, 0)
        code, out, _ = run(capsys, "analyze", ckpt)
        row = next(csv.DictReader(io.StringIO(out)))
        assert code == 0 and row["count_above"] == "0"

    def test_trained_bora_ceiling(self, capsys, tmp_path):
        ckpt = self._checkpoint(capsys, tmp_path, 30)
        out = run(capsys, "analyze", ckpt, "--threshold", 1e-9, "--relative")[1]
        assert 0 < int(next(csv.DictReader(io.StringIO(out)))["count_above"]) <= 16
        out = run(capsys, "analyze", ckpt, "--threshold", 1e9)[1]
        assert next(csv.DictReader(io.StringIO(out)))["count_above"] == "0"

    def test_writes_file(self, capsys, tmp_path):
        ckpt = self._checkpoint(capsys, tmp_path, 2)
        assert run(capsys, "analyze", ckpt, "--out", tmp_path / "s.csv", "--label", "q")[0] == 0
        assert (tmp_path / "s.csv").read_text().splitlines()[1].startswith("q,bora,8,4,")

    def test_bad_checkpoint(self, capsys, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        code, _, err = run(capsys, "analyze", bad)
        assert code == 4 and "bytes" in err

    def test_bad_threshold(self, capsys, tmp_path):
        ckpt = self._checkpoint(capsys, tmp_path, 0)
        assert run(capsys, "analyze", ckpt, "--threshold", -1)[0] == 2


SWEEP_INI = """
[adapter]
m = 16
n = 16
[task]
target_rank = 4
[train]
steps = 5
lr = 0.01
[sweep]
variant = bora, lora
r = 2, 4
b = 2
seeds = 0, 1
"""


class TestSweepCommand:
    def test_rows_and_determinism(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text(SWEEP_INI)
        code, first, _ = run(capsys, "sweep", "--config", cfg)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(first)))
        # 2 variants x 2 ranks x 2 seeds; lora collapses b to 1 so no duplicates
        assert len(rows) == 8
        assert {r["variant"] for r in rows} == {"bora", "lora"}
        second = run(capsys, "sweep", "--config", cfg, "--workers", 2)[1]
        assert drop_wall(first) == drop_wall(second)

    def test_out_file(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text(SWEEP_INI)
        assert run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "s.csv")[0] == 0
        assert (tmp_path / "s.csv").read_text().startswith("variant,m,n,r,b,sigma_transform,alpha,seed")

    def test_empty_grid(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text("[sweep]\nseeds = ,\n")
        assert run(capsys, "sweep", "--config", cfg)[0] == 2

    def test_bad_grid_point_fails_fast(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text("[adapter]\nm = 16\nn = 16\n[sweep]\nb = 2, 3\n")
        code, _, err = run(capsys, "sweep", "--config", cfg)
        assert code == 2 and "divide" in err


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck", "--configs", 2)
    assert code == 0
    assert out.count("PASS") == 5
