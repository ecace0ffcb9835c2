import hashlib
import re

import numpy as np
import pytest

from kernel_bellman.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from kernel_bellman.config import ConfigError, build, load_config, parse_text
from kernel_bellman.losses import LOSS_IDS


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- config grammar ---------------------------------------------------------


def test_sections_become_dotted_keys():
    raw = parse_text("env = tvr-chain  # trailing comment\nseed=3\n\n[train]\nloss = rg\nlr_grid = 0.1, 0.01\n")
    assert raw == {"env": "tvr-chain", "seed": "3", "train.loss": "rg", "train.lr_grid": "0.1, 0.01"}
    cfg = build(raw, env_seed=False)
    assert cfg["seed"] == 3 and cfg["train.lr_grid"] == (0.1, 0.01) and cfg["train.epochs"] == 2000


def test_unknown_keys_listed_together():
    with pytest.raises(ConfigError) as e:
        build({"env": "tvr-chain", "trian.loss": "rg", "kernel.width": "1", "seed": "x"}, env_seed=False)
    msg = str(e.value)
    assert "'trian.loss'" in msg and "'kernel.width'" in msg and "bad value for 'seed'" in msg


def test_snapshot_roundtrip():
    cfg = build(parse_text("env = baird-star\n[train]\nloss = td0\nepochs = 10\n"), env_seed=False)
    again = build(parse_text(cfg.snapshot()), env_seed=False)
    assert again.values == cfg.values


def test_env_seed_override(monkeypatch, tmp_path):
    p = write_cfg(tmp_path, "env = tvr-chain\nseed = 1\n")
    monkeypatch.setenv("KBL_SEED", "42")
    assert load_config(p)["seed"] == 42
    monkeypatch.delenv("KBL_SEED")
    assert load_config(p)["seed"] == 1


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


# -- collect ----------------------------------------------------------------


def test_collect_tvr(tmp_path):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 'a'}\n[data]\nn = 2000\n")
    assert main(["collect", str(p)]) == EXIT_OK
    csv = tmp_path / "a" / "dataset.csv"
    lines = csv.read_text().splitlines()
    assert len(lines) == 2001
    assert (tmp_path / "a" / "manifest.txt").exists()
    first = sha(csv)
    assert main(["collect", str(p)]) == EXIT_OK
    assert sha(csv) == first


def test_collect_zero_rows_is_usage_error(tmp_path, capsys):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 'a'}\n[data]\nn = 0\n")
    assert main(["collect", str(p)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_collect_unknown_env(tmp_path):
    p = write_cfg(tmp_path, f"env = atari\nout = {tmp_path / 'a'}\n")
    assert main(["collect", str(p)]) == EXIT_CONFIG


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {blocker / 'sub'}\n")
    assert main(["collect", str(p)]) == EXIT_CONFIG


def test_bad_arguments_exit_2():
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["train"]) == EXIT_CONFIG


# -- train ------------------------------------------------------------------


PUDDLE = """env = puddle-world
out = {out}
[data]
n = 200
[train]
loss = kloss-v
epochs = 2000
batch_size = 50
[model]
hidden = 8
[oracle]
grid = 5,5
samples_per_cell = 10
"""


def test_train_puddle_writes_full_metric_csv(tmp_path):
    out = tmp_path / "puddle"
    assert main(["train", str(write_cfg(tmp_path, PUDDLE.format(out=out)))]) == EXIT_OK
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("epoch,loss,mse,bellman,theta_norm,status")
    assert len(rows) == 2001
    manifest = (out / "manifest.txt").read_text()
    assert "command = train" in manifest and re.search(r"input_hash = [0-9a-f]{64}", manifest)
    assert (out / "config.cfg").exists() and (out / "final.ckpt").exists()


def test_unknown_loss_names_valid_ids(tmp_path, capsys):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 'x'}\n[train]\nloss = sbeed\n")
    assert main(["train", str(p)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert all(lid in err for lid in LOSS_IDS)


def test_diverged_run_exits_zero(tmp_path, capsys):
    p = write_cfg(tmp_path, f"""env = baird-star
out = {tmp_path / 'b'}
[data]
n = 700
[train]
loss = td0
optimizer = sgd
lr = 0.01
epochs = 1000
batch_size = 50
metric_every = 10
init = 1,1,1,1,1,1,10,1
""")
    assert main(["train", str(p)]) == EXIT_OK
    assert "status=DIVERGED" in capsys.readouterr().out
    assert "DIVERGED" in (tmp_path / "b" / "metrics.csv").read_text().splitlines()[-1]


def test_mode_verify_table(tmp_path):
    p = write_cfg(tmp_path, f"mode = verify\nout = {tmp_path / 'v'}\n[verify]\ninstances = 5\n")
    assert main(["train", str(p)]) == EXIT_OK
    table = (tmp_path / "v" / "verify.txt").read_text().splitlines()
    assert all(line.startswith("PASS") for line in table[:-1])
    assert table[-1].endswith("checks passed")


def test_checkpoints_and_rerun_are_byte_identical(tmp_path):
    out = tmp_path / "t"
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {out}\n[train]\nepochs = 40\nbatch_size = 0\nlr = 0.01\n"
                            "checkpoint_every = 20\ninit_scale = 1\n")
    assert main(["train", str(p)]) == EXIT_OK
    assert sorted(c.name for c in (out / "checkpoints").iterdir()) == ["epoch_000020.ckpt", "epoch_000040.ckpt"]
    before = {f.name: f.read_bytes() for f in out.iterdir() if f.is_file() and f.name != "timing.txt"}
    assert main(["rerun", str(out / "manifest.txt")]) == EXIT_OK
    after = {f.name: f.read_bytes() for f in out.iterdir() if f.is_file() and f.name != "timing.txt"}
    assert before == after


def test_seed_override_changes_data(tmp_path, monkeypatch):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 'c'}\n[data]\nn = 50\n")
    assert main(["collect", str(p)]) == EXIT_OK
    a = sha(tmp_path / "c" / "dataset.csv")
    monkeypatch.setenv("KBL_SEED", "9")
    assert main(["collect", str(p)]) == EXIT_OK
    assert sha(tmp_path / "c" / "dataset.csv") != a
    assert "seed = 9" in (tmp_path / "c" / "manifest.txt").read_text()


# -- compare ----------------------------------------------------------------


def tvr_cfg(tmp_path, loss, metric_every=1, epochs=30):
    return write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / loss}\n[train]\nloss = {loss}\n"
                               f"epochs = {epochs}\nbatch_size = 0\nlr = 0.01\nmetric_every = {metric_every}\n"
                               "init_scale = 1\n", f"{loss}.cfg")


def test_compare_single_run(tmp_path):
    assert main(["train", str(tvr_cfg(tmp_path, "kloss-v"))]) == EXIT_OK
    out = tmp_path / "cmp"
    assert main(["compare", str(tmp_path / "kloss-v"), "--out", str(out)]) == EXIT_OK
    header = (out / "combined.csv").read_text().splitlines()[0]
    assert header == "epoch,kloss-v:loss,kloss-v:mse,kloss-v:bellman,kloss-v:theta_norm"
    svg = (out / "mse.svg").read_text()
    assert svg.count("<!-- kloss-v -->") == 1


def test_compare_mismatched_grids_resamples(tmp_path, capsys):
    assert main(["train", str(tvr_cfg(tmp_path, "kloss-v", 1))]) == EXIT_OK
    assert main(["train", str(tvr_cfg(tmp_path, "rg", 5))]) == EXIT_OK
    out = tmp_path / "cmp"
    with pytest.warns(UserWarning, match="resampl"):
        rc = main(["compare", str(tmp_path / "kloss-v"), str(tmp_path / "rg"), "--out", str(out)])
    assert rc == EXIT_OK
    rows = (out / "combined.csv").read_text().splitlines()
    assert [int(r.split(",")[0]) for r in rows[1:]] == [5, 10, 15, 20, 25, 30]
    captured = capsys.readouterr()
    assert re.search(r"kloss-v: pearson\(loss, mse\) = -?[0-9.]+", captured.out)
    assert re.search(r"rg: pearson\(loss, mse\) = -?[0-9.]+", captured.out)
    assert "Pearson r: kloss-v" in (out / "scatter.svg").read_text()


def test_compare_from_configs_with_labels(tmp_path):
    out = tmp_path / "cmp"
    cfgs = [str(tvr_cfg(tmp_path, m)) for m in ("kloss-v", "td0")]
    assert main(["compare", *cfgs, "--out", str(out), "--labels", "K,TD"]) == EXIT_OK
    assert (out / "combined.csv").read_text().splitlines()[0].startswith("epoch,K:loss")
    assert "<!-- Pearson r: K " in (out / "scatter.svg").read_text()


def test_compare_missing_run(tmp_path):
    assert main(["compare", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


# -- solve-linear -----------------------------------------------------------


def test_solve_linear_tvr(tmp_path):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 's'}\n[data]\nn = 2000\n")
    assert main(["solve-linear", str(p)]) == EXIT_OK
    kv = dict(line.split(" = ", 1) for line in (tmp_path / "s" / "solve.txt").read_text().splitlines() if " = " in line)
    td = np.array(kv["theta_td"].split(), float)
    assert np.linalg.norm(td - [0.8, 1.0, 0.0]) < 0.05
    assert float(kv["difference"]) <= 1e-8


def test_solve_linear_one_hot_certainty_equivalence(tmp_path):
    p = write_cfg(tmp_path, f"env = tvr-chain\nout = {tmp_path / 's'}\n[data]\nn = 500\n[solve]\nfeatures = one-hot\n")
    assert main(["solve-linear", str(p)]) == EXIT_OK
    kv = dict(line.split(" = ", 1) for line in (tmp_path / "s" / "solve.txt").read_text().splitlines() if " = " in line)
    assert float(kv["certainty_equivalence_gap"]) <= 1e-8


def test_solve_linear_needs_tabular(tmp_path):
    p = write_cfg(tmp_path, f"env = puddle-world\nout = {tmp_path / 's'}\n[data]\nn = 50\n")
    assert main(["solve-linear", str(p)]) == EXIT_CONFIG


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC) == (0, 2, 3)
