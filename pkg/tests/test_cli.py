import subprocess
import sys

import pytest

from homer.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from homer.config import ConfigError, load_config, parse_config

SMALL = """\
seed=5
gen.n_users=20
gen.n_requests=150
gen.n_max=12
model.d_embed=4
model.d_token=8
model.n_max=12
train.lr=0.001
train.batch_size=16
bench.requests=6
"""


def _config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + extra)
    return str(path)


def _first_line(path):
    with open(path, encoding="utf-8", errors="replace") as f:
        return f.readline()


def test_gradcheck_exits_zero(tmp_path, capsys):
    assert main(["gradcheck", "--config", _config(tmp_path), "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    err = float(out.split("max relative error ")[1].split()[0])
    assert err <= 1e-4
    assert (tmp_path / "gradcheck.csv").exists()


def test_gradcheck_failure_is_numeric_exit(tmp_path):
    # a huge step makes the finite differences useless
    cfg = _config(tmp_path, "gradcheck.h=10.0\ngradcheck.tol=1e-12\n")
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_train_twice_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["train", "--config", cfg, "--out", str(b)]) == EXIT_OK
    for name in ("model.ckpt", "metrics.csv", "eval.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_outputs_carry_config_hash(tmp_path):
    cfg = _config(tmp_path)
    digest = load_config(cfg).hash()
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    for name in ("metrics.csv", "eval.csv"):
        assert _first_line(tmp_path / name).strip() == f"# homer train config={digest}"


def test_seed_flag_changes_hash_and_out_does_not():
    base = parse_config(SMALL)
    assert parse_config(SMALL, seed=6).hash() != base.hash()
    assert parse_config(SMALL, out="/elsewhere").hash() == base.hash()
    assert parse_config(SMALL, seed=6).gen.seed == 6 == parse_config(SMALL, seed=6).model.seed


def test_unknown_key_exit_names_key(tmp_path, capsys):
    cfg = _config(tmp_path, "model.depth=3\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "model.depth" in capsys.readouterr().err


def test_config_errors():
    with pytest.raises(ConfigError):
        parse_config("gen.n_requests=10\n")  # no seed
    with pytest.raises(ConfigError):
        parse_config("seed=1\ntrain.lr=fast\n")
    with pytest.raises(ConfigError):
        parse_config("seed=1\nmodel.variant=huge\n")
    assert parse_config("# comment\nseed=2\n").seed == 2


def test_bad_command_and_variant(tmp_path):
    assert main(["explode"]) == EXIT_CONFIG
    cfg = _config(tmp_path, "ablate.variants=full,bogus\n")
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_corrupt_dataset_is_data_error_missing_path_is_config_error(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a dataset at all")
    cfg = _config(tmp_path, f"paths.dataset={bad}\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_DATA
    missing = _config(tmp_path, f"paths.dataset={tmp_path / 'nope.bin'}\n")
    assert main(["train", "--config", missing, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_eval_needs_checkpoint_and_rejects_mismatch(tmp_path):
    cfg = _config(tmp_path)
    assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    ok = _config(tmp_path, f"paths.checkpoint={tmp_path / 'model.ckpt'}\n")
    assert main(["eval", "--config", ok, "--out", str(tmp_path / "e")]) == EXIT_OK
    assert _first_line(tmp_path / "e" / "eval.csv").startswith("# homer eval config=")
    wrong = _config(tmp_path, f"paths.checkpoint={tmp_path / 'model.ckpt'}\nmodel.d_token=16\n")
    assert main(["eval", "--config", wrong, "--out", str(tmp_path / "w")]) == EXIT_DATA


def test_gen_then_train_from_file(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "g")]) == EXIT_OK
    assert "sha256=" in capsys.readouterr().out
    data = tmp_path / "g" / "dataset.bin"
    from_file = _config(tmp_path, f"paths.dataset={data}\n")
    assert main(["train", "--config", from_file, "--out", str(tmp_path / "t")]) == EXIT_OK
    assert (tmp_path / "t" / "model.ckpt").exists()


def test_bench_writes_csv(tmp_path):
    assert main(["bench", "--config", _config(tmp_path), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("# homer bench config=")
    assert lines[1] == "k_bucket,mode,gflops_per_request,p50_ms,p99_ms,savings_ratio"


def test_ablate_writes_tables(tmp_path):
    cfg = _config(tmp_path, "ablate.seeds=0\nablate.variants=full,pointwise\n")
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert rows[1].startswith("variant,seed,auc_clk")
    assert len(rows) == 4
    assert len((tmp_path / "ablation_mean.csv").read_text().splitlines()) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "homer", "gradcheck", "--config", _config(tmp_path),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "max relative error" in proc.stdout
