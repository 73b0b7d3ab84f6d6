"""End-to-end CLI pipelines, exit codes, run directories, manifests."""
import json

from chimp.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from chimp.fusion import make_complementary_fixture, save_task_csvs


def run(args):
    return main([str(a) for a in args])


class TestPipeline:
    def test_generate_train_eval_explain(self, tmp_path):
        gen = tmp_path / "gen"
        assert run(["generate", "--target", "fm4", "--m", "50", "--noise-mult", "0.1",
                    "--seed", "3", "--out", gen]) == EXIT_OK
        assert (gen / "data.csv").exists()
        assert (gen / "target_measure.json").exists()

        train = tmp_path / "train"
        assert run(["train", "--data", gen / "data.csv", "--epochs", "60", "--seed", "1",
                    "--target-measure", gen / "target_measure.json", "--out", train]) == EXIT_OK
        for name in ("params.json", "measure.json", "history.csv", "metrics.json",
                     "manifest.json"):
            assert (train / name).exists(), name
        metrics = json.loads((train / "metrics.json").read_text())
        assert metrics["fm_mse"] is not None and metrics["fm_mse"] < 0.05
        history = (train / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_mse"
        assert len(history) == 61

        ev = tmp_path / "eval"
        assert run(["eval", "--measure", train / "measure.json", "--data", gen / "data.csv",
                    "--out", ev]) == EXIT_OK
        assert json.loads((ev / "metrics.json").read_text())["m"] == 50

        ex = tmp_path / "explain"
        assert run(["explain", "--measure", train / "measure.json",
                    "--data", gen / "data.csv", "--svg", "--out", ex]) == EXIT_OK
        report = json.loads((ex / "xai_report.json").read_text())
        assert len(report["shapley"]) == 3
        assert (ex / "shapley.svg").read_text().startswith("<svg")

    def test_generate_special_targets(self, tmp_path):
        assert run(["generate", "--target", "mean:4", "--m", "10", "--seed", "0",
                    "--out", tmp_path / "a"]) == EXIT_OK
        assert run(["generate", "--target", "los:0.5,0.3,0.2", "--m", "10", "--seed", "0",
                    "--out", tmp_path / "b"]) == EXIT_OK

    def test_exp1_deterministic_bytes(self, tmp_path):
        args = ["exp1", "--epochs", "4", "--trials", "2", "--m", "30", "--seed", "7"]
        assert run(args + ["--out", tmp_path / "r1"]) == EXIT_OK
        assert run(args + ["--out", tmp_path / "r2"]) == EXIT_OK
        a = (tmp_path / "r1" / "exp1_table.csv").read_bytes()
        b = (tmp_path / "r2" / "exp1_table.csv").read_bytes()
        assert a == b

    def test_fuse_from_csv_directory(self, tmp_path):
        post = tmp_path / "posteriors"
        save_task_csvs(make_complementary_fixture(m_per_class=30), post)
        out = tmp_path / "fused"
        assert run(["fuse", "--posteriors", post, "--epochs", "50", "--seed", "2",
                    "--out", out]) == EXIT_OK
        metrics = json.loads((out / "fusion_metrics.json").read_text())
        assert metrics["mean_accuracy"] > max(metrics["single_accuracies"].values())
        assert (out / "xai_reports.json").exists()

    def test_gradcheck_exit_codes(self):
        assert run(["gradcheck", "--n", "3", "--cases", "5", "--seed", "0"]) == EXIT_OK
        assert run(["gradcheck", "--n", "3", "--cases", "5", "--seed", "0",
                    "--tol", "1e-30"]) == EXIT_NUMERIC

    def test_flops(self, capsys):
        assert run(["flops", "--n", "4"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "measured" in out


class TestErrors:
    def test_usage_error_exit_code(self):
        assert run(["no-such-command"]) == EXIT_USAGE

    def test_missing_file_is_usage_error(self, tmp_path):
        assert run(["eval", "--measure", tmp_path / "nope.json",
                    "--data", tmp_path / "nope.csv"]) == EXIT_USAGE

    def test_bad_target_spec(self, tmp_path):
        assert run(["generate", "--target", "frobnicate:3", "--m", "5",
                    "--out", tmp_path / "x"]) == EXIT_USAGE

    def test_help_exits_zero(self):
        assert run(["--help"]) == EXIT_OK


class TestManifest:
    def test_manifest_records_everything(self, tmp_path):
        gen = tmp_path / "gen"
        run(["generate", "--target", "fm1", "--m", "20", "--seed", "5", "--out", gen])
        train = tmp_path / "train"
        run(["train", "--data", gen / "data.csv", "--epochs", "10", "--seed", "0",
             "--out", train])
        manifest = json.loads((train / "manifest.json").read_text())
        assert manifest["subcommand"] == "train"
        assert manifest["params"]["epochs"] == 10
        assert str(gen / "data.csv") in manifest["inputs"]
        assert len(manifest["inputs"][str(gen / "data.csv")]) == 64  # sha256 hex
        assert "numpy" in manifest["versions"]
        assert set(manifest["outputs"]) >= {"params.json", "measure.json", "history.csv"}
        assert "duration_s" in manifest

    def test_run_reexecutable_from_manifest(self, tmp_path):
        first = tmp_path / "first"
        run(["generate", "--target", "fm3", "--m", "25", "--noise-mult", "0.3",
             "--seed", "42", "--out", first])
        manifest = json.loads((first / "manifest.json").read_text())
        argv = list(manifest["argv"])
        argv[argv.index(str(first))] = str(tmp_path / "second")
        assert run(argv) == EXIT_OK
        a = (first / "data.csv").read_bytes()
        b = (tmp_path / "second" / "data.csv").read_bytes()
        assert a == b

    def test_auto_run_dir_respects_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CHIMP_RUN_ROOT", str(tmp_path / "root"))
        assert run(["generate", "--target", "fm1", "--m", "5", "--seed", "0"]) == EXIT_OK
        made = list((tmp_path / "root").glob("generate-*"))
        assert len(made) == 1
        assert (made[0] / "manifest.json").exists()
