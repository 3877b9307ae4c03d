import json

import pytest

from slrprune.cli import EXIT_CONFIG, EXIT_NONFINITE, EXIT_OK, EXIT_THRESHOLD, main
from slrprune.config import RunConfig, coerce, load_config
from slrprune.diagnostics import read_metrics
from slrprune.exceptions import ConfigError


def _args(tmp_path, *extra):
    return ["--synthetic", "240,3,8", "--model", "mlp-8-16-3", "--output-dir", str(tmp_path / "out"),
            "--train-epochs", "3", "--epochs", "2", "--batch-size", "32", "--train-lr", "0.01",
            "--retrain-epochs", "1", "--keep-fraction", "0.3", *extra]


# configuration ---------------------------------------------------------------

def test_ini_roundtrip(tmp_path):
    cfg = RunConfig(seed=4, rho=0.5, inner_steps=7, synthetic="10,2,3", layer_keep="fc1.weight:0.2")
    path = tmp_path / "run.ini"
    path.write_text(cfg.to_ini())
    assert load_config(path) == cfg


@pytest.mark.parametrize("text, field", [
    ("[slr]\nrho = -1\n", "slr.rho"),
    ("[slr]\nM = 1\n", "slr.M"),
    ("[run]\nrho = 1\n", "run.rho"),
    ("[run]\nbogus = 1\n", "run.bogus"),
    ("[sparsity]\nkeep_fraction = 1.5\n", "sparsity.keep_fraction"),
    ("[sparsity]\nlayer_keep = fc1.weight\n", "sparsity.layer_keep"),
    ("[run]\nmethod = prune\n", "run.method"),
    ("[run]\nmodel = resnet\n", "run.model"),
    ("[optimizer]\nbatch_size = many\n", "optimizer.batch_size"),
    ("[data]\ntrain_images = /nonexistent\n", "data.train_images"),
])
def test_config_errors_name_the_field(tmp_path, text, field):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config(path).validate()
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_coerce():
    assert coerce("inner_steps", "None") is None
    assert coerce("rho", "0.25") == 0.25 and coerce("seed", "3") == 3
    with pytest.raises(ConfigError):
        coerce("seed", "")


def test_engine_config_mapping():
    cfg = RunConfig(rho=0.3, s0=0.5, soc_fail_cap=0)
    slr = cfg.engine_config("slr")
    assert (slr.rho, slr.s0, slr.soc_fail_cap, slr.stage2_numerator) == (0.3, 0.5, 0, "intermediate")
    assert cfg.engine_config("admm").rho == 0.3


# command line ----------------------------------------------------------------

def test_cli_exit_codes_for_bad_input(tmp_path, capsys):
    assert main(["prune", "--rho", "-1"]) == EXIT_CONFIG
    assert "slr.rho" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["prune", "--no-such-flag"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_CONFIG
    assert main(["evaluate", *_args(tmp_path)]) == EXIT_CONFIG  # nothing pruned yet


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_divergence_exit_code(tmp_path):
    assert main(["train", *_args(tmp_path, "--train-lr", "1e30")]) == EXIT_NONFINITE


def test_cli_workflow(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", *_args(tmp_path)]) == EXIT_OK
    assert (out / "baseline.ckpt").exists()
    assert main(["prune", *_args(tmp_path, "--method", "slr")]) == EXIT_OK
    capsys.readouterr()
    assert main(["retrain", *_args(tmp_path, "--method", "slr")]) == EXIT_OK
    assert "retrained" in capsys.readouterr().out
    assert main(["evaluate", *_args(tmp_path, "--checkpoint", str(out / "retrained-slr.ckpt"))]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    # budgets round up: ceil(0.3 * 128) + ceil(0.3 * 48) = 54 of 176 weights
    assert result["compression_rate"] >= 176 / 54 - 1e-9
    assert main(["prune", *_args(tmp_path, "--method", "baseline")]) == EXIT_OK
    assert (out / "heatmaps" / "baseline-fc1.weight.txt").exists()
    assert main(["report", *_args(tmp_path)]) == EXIT_OK
    assert "metrics-slr.jsonl" in (out / "report.tsv").read_text()
    iterations, others = read_metrics(out / "metrics-slr.jsonl")
    assert iterations and others[-1]["type"] == "prune_outcome"
    assert all(r["wall_time"] is None for r in iterations)


def test_cli_require_threshold(tmp_path, capsys):
    args = _args(tmp_path, "--threshold-drop", "0", "--keep-fraction", "0.05")
    code = main(["prune", "--require-threshold", *args])
    reached = json.loads(capsys.readouterr().out)["epochs_to_threshold"] is not None
    assert code == (EXIT_OK if reached else EXIT_THRESHOLD)
    assert main(["prune", *args]) == EXIT_OK


def test_compare_is_deterministic(tmp_path):
    outputs = []
    for run in ("a", "b"):
        args = _args(tmp_path, "--output-dir", str(tmp_path / run))
        assert main(["compare", *args]) == EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir()) if p.is_file()})
    assert outputs[0].keys() == {"baseline.ckpt", "train-metrics.jsonl", "metrics-admm.jsonl",
                                 "metrics-slr.jsonl", "pruned-admm.ckpt", "pruned-slr.ckpt",
                                 "summary.tsv"}
    assert outputs[0] == outputs[1]
    header = outputs[0]["summary.tsv"].decode().splitlines()[0].split("\t")
    assert header[:5] == ["model", "baseline_acc", "epochs", "admm_acc", "slr_acc"]


def test_ablate_writes_one_log_per_value(tmp_path):
    assert main(["ablate", "--param", "s0", "--values", "0.01,0.1", *_args(tmp_path)]) == EXIT_OK
    out = tmp_path / "out"
    assert (out / "ablate-s0-0.01.jsonl").exists() and (out / "ablate-s0-0.1.jsonl").exists()
    assert len((out / "ablate-s0.tsv").read_text().splitlines()) == 3
    assert main(["ablate", "--param", "s0", "--values", ",", *_args(tmp_path)]) == EXIT_CONFIG
