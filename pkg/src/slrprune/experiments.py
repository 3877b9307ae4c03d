"""Experiment runners shared by the command line and the acceptance suite.

Every runner takes a :class:`~slrprune.config.RunConfig`, writes its
artifacts under ``config.output_dir`` and returns plain Python values.
File names are fixed so later subcommands can find earlier outputs.
"""
from __future__ import annotations

import math
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_idx, make_synthetic
from .diagnostics import MetricsSink, RunReport, export_sparsity_heatmap, read_metrics
from .exceptions import ConfigError
from .mnist import load_mnist
from .models import build_model, evaluate_accuracy
from .pipeline import accuracy_at_budget, hardprune, masked_retrain, prune_outcome, train
from .sparsity import SparsityPlan, compression_rate, mask_from

SUMMARY_COLUMNS = (
    "model", "baseline_acc", "epochs", "admm_acc", "slr_acc", "compression_rate",
    "admm_epochs_to_threshold", "slr_epochs_to_threshold",
)


def _out(config, name):
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def load_data(config):
    """``(train_set, test_set)`` described by ``config``."""
    if config.synthetic is not None:
        points, classes, dim = config.synthetic_spec()
        train_set = make_synthetic(points, classes, dim, config.seed, split="train")
        test_set = make_synthetic(max(points // 4, classes), classes, dim, config.seed, split="test")
    elif config.train_images is not None:
        train_set = load_idx(config.train_images, config.train_labels, "train", limit=config.train_limit)
        test_set = load_idx(config.test_images, config.test_labels, "test")
    elif config.mnist_dir is not None:
        train_set = load_mnist(config.mnist_dir, "train", limit=config.train_limit)
        test_set = load_mnist(config.mnist_dir, "test")
    else:
        raise ConfigError("data.mnist_dir", "no dataset given (set mnist_dir, IDX paths or synthetic)")
    return train_set, test_set


def make_plan(config, model):
    overrides = {}
    shapes = {k: model.params[k].shape for k in model.prunable}
    for name, frac in config.layer_keep_map().items():
        if name not in shapes:
            raise ConfigError("sparsity.layer_keep", f"layer {name!r} is not a prunable layer of {model.name}")
        size = model.params[name].data.size
        overrides[name] = min(size, math.ceil(frac * size - 1e-9))
    return SparsityPlan.from_keep_fraction(shapes, config.keep_fraction, overrides)


def load_model(config, path):
    model = build_model(config.model, config.seed)
    tensors = load_checkpoint(path)
    missing = set(model.params) - set(tensors)
    if missing:
        raise ConfigError("run.checkpoint", f"{path} lacks tensors {sorted(missing)}")
    model.load_weights({k: tensors[k] for k in model.params})
    return model


def run_train(config, data=None):
    """Train the dense baseline; writes ``baseline.ckpt`` and ``train-metrics.jsonl``."""
    train_set, test_set = data or load_data(config)
    model = build_model(config.model, config.seed)
    history = train(model, train_set, config.train_epochs, config.train_optimizer_config(),
                    seed=config.seed)
    accuracy = evaluate_accuracy(model, test_set)
    with MetricsSink(_out(config, "train-metrics.jsonl")) as sink:
        for epoch, value in enumerate(history, start=1):
            sink.write({"type": "train_epoch", "epoch": epoch, "train_loss": value})
        sink.write({"type": "train_outcome", "model": model.name, "test_accuracy": accuracy})
    save_checkpoint(_out(config, "baseline.ckpt"), model.weights())
    return model, accuracy


def _baseline(config, data):
    """Baseline model and accuracy: from ``config.checkpoint`` or trained now."""
    path = config.checkpoint or _out(config, "baseline.ckpt")
    if Path(path).exists():
        model = load_model(config, path)
        return model, evaluate_accuracy(model, data[1])
    return run_train(config, data)


def run_prune(config, method=None, data=None, baseline=None, log_name=None):
    """Prune the baseline with one method.

    Writes ``pruned-<method>.ckpt``, ``metrics-<method>.jsonl`` and one
    heatmap per pruned layer.

    Returns:
        ``(outcome, baseline_accuracy)``; ``outcome`` is a
        :class:`~slrprune.pipeline.PruneOutcome`.
    """
    method = method or config.method
    data = data or load_data(config)
    base_model, base_acc = baseline or _baseline(config, data)
    model = base_model.clone()
    plan = make_plan(config, model)
    threshold = base_acc - config.threshold_drop
    with MetricsSink(_out(config, log_name or f"metrics-{method}.jsonl")) as sink:
        report = RunReport(method, sink)
        if method == "baseline":
            # one-shot magnitude pruning, no augmented-Lagrangian training
            _, masks = hardprune(model, plan)
            accuracy = evaluate_accuracy(model, data[1])
            outcome = prune_outcome("baseline", model, plan, masks, accuracy, 0.0,
                                    0.0 if accuracy >= threshold else None)
            report.add_outcome(outcome.to_record())
        else:
            outcome = accuracy_at_budget(
                method, model, data[0], data[1], plan, config.epochs, threshold=threshold,
                check_every=config.check_every, optimizer_config=config.optimizer_config(),
                engine_config=config.engine_config(method), seed=config.seed, report=report)
    save_checkpoint(_out(config, f"pruned-{method}.ckpt"), model.weights())
    heat_dir = _out(config, "heatmaps")
    heat_dir.mkdir(exist_ok=True)
    for name in plan.budgets:
        export_sparsity_heatmap(model.params[name].data, heat_dir / f"{method}-{name}.txt")
    return outcome, base_acc


def run_retrain(config, method=None, data=None):
    """Masked retraining of ``pruned-<method>.ckpt`` (or ``config.checkpoint``)."""
    method = method or config.method
    data = data or load_data(config)
    path = config.checkpoint or _out(config, f"pruned-{method}.ckpt")
    if not Path(path).exists():
        raise ConfigError("run.checkpoint", f"no pruned checkpoint at {path}; run 'prune' first")
    model = load_model(config, path)
    plan = make_plan(config, model)
    masks = {k: mask_from(model.params[k].data) for k in plan.budgets}
    before = evaluate_accuracy(model, data[1])
    masked_retrain(model, masks, data[0], config.retrain_epochs, config.train_optimizer_config(),
                   seed=config.seed)
    after = evaluate_accuracy(model, data[1])
    with MetricsSink(_out(config, f"retrain-{method}.jsonl")) as sink:
        sink.write({"type": "retrain_outcome", "method": method, "epochs": config.retrain_epochs,
                    "hardprune_accuracy": before, "retrain_accuracy": after})
    save_checkpoint(_out(config, f"retrained-{method}.ckpt"), model.weights())
    return before, after


def run_evaluate(config, data=None):
    """Accuracy and sparsity of a checkpoint."""
    data = data or load_data(config)
    path = config.checkpoint or _out(config, f"pruned-{config.method}.ckpt")
    if not Path(path).exists():
        raise ConfigError("run.checkpoint", f"checkpoint not found: {path}")
    model = load_model(config, path)
    sizes = {k: model.params[k].data.size for k in model.prunable}
    kept = {k: model.params[k].data for k in model.prunable}
    try:
        overall, per_layer = compression_rate(sizes, kept)
    except ZeroDivisionError:
        overall, per_layer = math.inf, {k: math.inf for k in sizes}
    return {
        "checkpoint": str(path),
        "accuracy": evaluate_accuracy(model, data[1]),
        "compression_rate": overall,
        "per_layer_compression": per_layer,
    }


def fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def run_compare(config, data=None):
    """Paired SLR/ADMM runs from one baseline; writes ``summary.tsv``."""
    data = data or load_data(config)
    baseline = _baseline(config, data)
    outcomes = {m: run_prune(config, m, data, baseline)[0] for m in ("admm", "slr")}
    row = {
        "model": config.model,
        "baseline_acc": baseline[1],
        "epochs": config.epochs,
        "admm_acc": outcomes["admm"].hardprune_accuracy,
        "slr_acc": outcomes["slr"].hardprune_accuracy,
        "compression_rate": outcomes["slr"].compression_rate,
        "admm_epochs_to_threshold": outcomes["admm"].epochs_to_threshold,
        "slr_epochs_to_threshold": outcomes["slr"].epochs_to_threshold,
    }
    write_table(_out(config, "summary.tsv"), [row], SUMMARY_COLUMNS)
    return row, outcomes


def write_table(path, rows, columns):
    lines = ["\t".join(columns)]
    lines += ["\t".join(fmt(row.get(c)) for c in columns) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


ABLATABLE = ("s0", "M", "r", "rho", "inner_steps", "lr", "soc_fail_cap")


def run_ablate(config, param, values, data=None):
    """One SLR pruning run per value of ``param``; one metrics log each."""
    if param not in ABLATABLE:
        raise ConfigError("ablate.param", f"must be one of {', '.join(ABLATABLE)}; got {param!r}")
    from .config import coerce
    data = data or load_data(config)
    baseline = _baseline(config, data)
    rows = []
    for raw in values:
        value = coerce(param, raw)
        variant = config.replace(**{param: value}).validate(check_files=False)
        outcome, _ = run_prune(variant, "slr", data, baseline, log_name=f"ablate-{param}-{raw}.jsonl")
        rows.append({"param": param, "value": raw, "slr_acc": outcome.hardprune_accuracy,
                     "epochs_to_threshold": outcome.epochs_to_threshold})
    write_table(_out(config, f"ablate-{param}.tsv"), rows,
                ("param", "value", "slr_acc", "epochs_to_threshold"))
    return rows


def run_report(config):
    """Summarize every metrics log in the output directory."""
    from .diagnostics import soc_recurs
    rows = []
    for path in sorted(Path(config.output_dir).glob("*.jsonl")):
        iterations, others = read_metrics(path)
        if not iterations:
            continue
        trace = [int(bool(r["soc1"]) and bool(r["soc2"])) for r in iterations]
        failed = [r["k"] for r, ok in zip(iterations, trace) if not ok]
        accs = [r["hardprune_accuracy"] for r in iterations if r.get("hardprune_accuracy") is not None]
        outcome = next((o for o in others if o.get("type") == "prune_outcome"), {})
        rows.append({
            "log": path.name,
            "method": iterations[0].get("method"),
            "iterations": len(iterations),
            "final_violation": iterations[-1]["violation"],
            "soc_failures": len(failed),
            "kappa": failed[-1] if failed else 0,
            "soc_recurs": soc_recurs(trace),
            "best_hardprune_acc": max(accs) if accs else None,
            "final_acc": outcome.get("hardprune_accuracy"),
            "epochs_to_threshold": outcome.get("epochs_to_threshold"),
        })
    columns = ("log", "method", "iterations", "final_violation", "soc_failures", "kappa",
               "soc_recurs", "best_hardprune_acc", "final_acc", "epochs_to_threshold")
    write_table(_out(config, "report.tsv"), rows, columns)
    return rows, columns
