import json

import numpy as np
import pytest

from gfnkit import cli
from gfnkit.config import ConfigError, default_config, dump_config, parse_config
from gfnkit.envs.dag import load_dataset
from gfnkit.envs.ising import load_samples
from gfnkit.envs.sequences import SEED_WORDS
from gfnkit.runner import METRIC_COLUMNS


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- config ------------------------------------------------------------------------

def test_defaults_follow_hyperparameter_tables():
    grid = default_config("hypergrid")
    assert grid.optimizer.lr == 1e-3 and grid.optimizer.z_lr == 0.1
    assert grid.optimizer.batch_size == 16 and grid.optimizer.hidden_sizes == (256, 256)
    assert grid.objective.subtb_lambda == 0.9
    assert default_config("bitseq").optimizer.z_lr == 0.05


@pytest.mark.parametrize("text", ["[env]\nname = hypergrid\nbogus = 1\n", "[optimiser]\nlr = 1\n",
                                  "[optimizer]\nlearning_rate = 1\n", "[env]\nname = nowhere\n",
                                  "[objective]\nname = xyz\n", "[env]\nname = hypergrid\n[objective]\nname = mdb\n",
                                  "[optimizer]\nbatch_size = many\n", "[optimizer]\nhidden = \n"])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_parse_round_trip():
    cfg = parse_config("[run]\nseed = 7\n[env]\nname = dag\nd = 3\n[objective]\nname = mdb\n"
                       "[optimizer]\nlr = 0.00025\n[eval]\nmetrics = jsd\n")
    assert cfg.seed == 7 and cfg.env["d"] == 3 and cfg.metric_list == ["jsd"]
    assert parse_config(dump_config(cfg)) == cfg


# -- cli ---------------------------------------------------------------------------

SMALL = """[run]
seed = 3
[env]
name = hypergrid
dim = 2
side = 3
[optimizer]
iterations = 40
hidden = 16,16
[eval]
interval = 20
metrics = tv,tv_exact
"""


def test_train_eval_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    code, out, err = run_cli(["train", "--config", cfg, "--out", str(tmp_path / "a")], capsys)
    assert code == 0 and "step=20" in err
    final = json.loads(out)
    assert final["step"] == 40
    rows = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert rows[0].split(",")[:len(METRIC_COLUMNS)] == list(METRIC_COLUMNS) and len(rows) == 3
    assert (tmp_path / "a" / "timing.csv").exists()

    assert run_cli(["train", "--config", cfg, "--out", str(tmp_path / "b")], capsys)[0] == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert run_cli(["train", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "c")], capsys)[0] == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()

    ckpt = str(tmp_path / "a" / "checkpoint.npz")
    code, out1, _ = run_cli(["eval", "--config", cfg, "--checkpoint", ckpt], capsys)
    assert code == 0
    record = json.loads(out1)
    assert np.isfinite(record["tv"]) and np.isfinite(record["tv_exact"])
    _, out2, _ = run_cli(["eval", "--config", cfg, "--checkpoint", ckpt, "--out", str(tmp_path / "e")], capsys)
    assert out1 == out2
    assert json.loads((tmp_path / "e" / "eval.json").read_text()) == record


def test_eval_untrained_policy_is_finite(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("iterations = 40", "iterations = 1").replace("interval = 20", "interval = 1"))
    run_cli(["train", "--config", cfg, "--out", str(tmp_path / "u")], capsys)
    code, out, _ = run_cli(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "u" / "checkpoint.npz")], capsys)
    assert code == 0 and all(np.isfinite(v) for v in json.loads(out).values())


def test_eval_rejects_mismatched_network(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("iterations = 40", "iterations = 1"))
    run_cli(["train", "--config", cfg, "--out", str(tmp_path / "u")], capsys)
    other = write(tmp_path, SMALL.replace("hidden = 16,16", "hidden = 8"), "other.ini")
    code, _, err = run_cli(["eval", "--config", other, "--checkpoint", str(tmp_path / "u" / "checkpoint.npz")],
                           capsys)
    assert code == 2 and "does not match" in err


def test_exact_metric_on_large_ising_is_an_explicit_error(tmp_path, capsys):
    cfg = write(tmp_path, "[env]\nname = ising\nside = 10\n[eval]\nmetrics = tv\n")
    code, out, err = run_cli(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "none.npz")], capsys)
    assert code == 2 and out == "" and "2^100" in err


def test_error_exit_codes(tmp_path, capsys):
    assert run_cli(["train", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)], capsys)[0] == 2
    bad = write(tmp_path, "[env]\nname = hypergrid\nwidth = 3\n")
    code, _, err = run_cli(["train", "--config", bad, "--out", str(tmp_path / "x")], capsys)
    assert code == 2 and "width" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code != 0


def test_gendata_er_dag(tmp_path, capsys):
    code, out, _ = run_cli(["gendata", "--kind", "er-dag", "--out", str(tmp_path)], capsys)
    assert code == 0
    ds = load_dataset(json.loads(out)[0])
    assert ds.data.shape == (100, 5)


def test_gendata_ising_rows(tmp_path, capsys):
    code, out, _ = run_cli(["gendata", "--kind", "ising", "--env", "ising", "--out", str(tmp_path)], capsys)
    assert code == 0
    x, side, sigma = load_samples(json.loads(out)[0])
    assert side == 3 and sigma == 0.2 and x.shape[1] == 9 and set(np.unique(x)) == {-1, 1}


def test_gendata_modes(tmp_path, capsys):
    code, out, _ = run_cli(["gendata", "--kind", "modes", "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = (tmp_path / "modes.txt").read_text().split()
    modes = [m for m in lines if set(m) <= {"0", "1"}]
    # at n=8 each mode is one seed word
    assert sorted(modes) == sorted(SEED_WORDS)
    assert (tmp_path / "test_set.txt").exists()


def test_gendata_phylo(tmp_path, capsys):
    assert run_cli(["gendata", "--kind", "phylo-synthetic", "--out", str(tmp_path)], capsys)[0] == 0
    assert (tmp_path / "species.txt").exists()


def test_enumerate(tmp_path, capsys):
    code, out, _ = run_cli(["enumerate", "--env", "hypergrid", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["num_terminals"] == 64
    rows = (tmp_path / "distribution.csv").read_text().splitlines()
    assert len(rows) == 65
    assert np.isclose(sum(float(r.split(",")[2]) for r in rows[1:]), 1.0)


def test_bench_report(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    reports = []
    for _ in range(2):
        code, out, _ = run_cli(["bench", "--config", cfg, "--warmup", "2", "--iters", "10", "--repeats", "4"],
                               capsys)
        assert code == 0
        reports.append(json.loads(out))
    r = reports[0]
    assert {"mean_its", "pm_3sigma", "warmup"} <= set(r) and r["mean_its"] > 0 and len(r["rates"]) == 4
    assert r["warmup"] == 2


def test_train_hypergrid_line_converges(tmp_path, capsys):
    cfg = write(tmp_path, "[env]\nname = hypergrid\ndim = 1\nside = 4\n[objective]\nname = tb\n"
                          "[optimizer]\niterations = 2000\n[eval]\ninterval = 1000\nmetrics = tv_exact\n")
    code, out, _ = run_cli(["train", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert code == 0 and json.loads(out)["tv_exact"] < 0.05
