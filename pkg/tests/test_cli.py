import os

import pytest

from bmphash import cli


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, capsys):
    f, l = tmp_path / "f.txt", tmp_path / "l.txt"
    code, _, _ = run(["synth", "--seed", 1, "--per-class", 20, "--n-classes", 4,
                      "--features", f, "--labels", l], capsys)
    assert code == 0
    return f, l


class TestCommands:
    def test_infer_train_eval(self, tmp_path, data, capsys):
        f, l = data
        out = tmp_path / "o"
        code, text, _ = run(["infer", "--features", f, "--labels", l, "--bits", 8,
                             "--out-dir", out], capsys)
        assert code == 0 and "items=4" in text
        assert os.path.exists(out / "codes.csv") and os.path.exists(out / "trace.csv")
        code, text, _ = run(["train", "--features", f, "--labels", l, "--codes",
                             out / "codes.csv", "--out", out / "m.bin", "--epochs", 20], capsys)
        assert code == 0 and "mismatch_ratio=" in text
        code, text, _ = run(["eval", "--model", out / "m.bin", "--query-features", f,
                             "--query-labels", l, "--db-features", f, "--db-labels", l,
                             "--codes", out / "codes.csv", "--out", out / "metrics.csv"], capsys)
        assert code == 0 and text.startswith("map=")
        assert (out / "metrics.csv").read_text().startswith("metric,cutoff,value")

    def test_config_file_with_override(self, tmp_path, data, capsys):
        f, l = data
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(f"features={f}\nlabels={l}\nbits=3\nmode=constant\n"
                       f"out_dir={tmp_path / 'c'}\n")
        code, text, _ = run(["infer", "--config", cfg, "--bits", 5], capsys)
        assert code == 0 and "bits=5" in text

    def test_experiment(self, tmp_path, capsys):
        code, text, _ = run(["experiment", "constant_vs_regress", "--seed", 0,
                             "--affinity", "metric", "--bits", 4,
                             "--out-dir", tmp_path / "e"], capsys)
        assert code == 0 and "regress_final_rel=" in text

    def test_experiment_requires_seed(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["experiment", "pipeline", "--out-dir", str(tmp_path)])
        assert info.value.code != 0

    def test_error_line(self, tmp_path, capsys):
        code, _, err = run(["infer", "--features", tmp_path / "missing.txt"], capsys)
        assert code == 1
        assert err.startswith("error: FileNotFoundError: ")
        assert len(err.strip().splitlines()) == 1

    def test_missing_setting(self, capsys):
        code, _, err = run(["train", "--features", "x"], capsys)
        assert code == 1 and "error: ValueError: missing required setting 'codes'" in err

    def test_invalid_value(self, tmp_path, capsys):
        code, _, err = run(["experiment", "pipeline", "--seed", 0, "--bits", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 1 and err.startswith("error: ValueError:")
