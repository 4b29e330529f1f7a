"""Command-line front end.

Wires ingestion, training, attack generation, the VC metric, and the sweep
harness into reproducible runs. Every command is deterministic given its
--seed (default 42, overridable via the VC_GUARD_SEED environment variable)
and prints that seed in its output metadata. Report-writing commands drop a
rendered PNG next to the delimited output unless --no-plot is given.

Exit codes: 0 success, 2 input error, 3 degenerate metric, 4 training
divergence.
"""

from __future__ import annotations

import functools
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import datasets, harness, plots
from .errors import DegenerateMetricError, DivergenceError, InputError
from .metric import VcConfig, vc
from .stats import pearson
from .tinynet import (
    FgsmConfig,
    Mlp,
    TrainConfig,
    TrainTrajectory,
    fgsm,
    input_gradient,
    load_checkpoint,
    save_checkpoint,
    train,
)

def _translate_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except DegenerateMetricError as exc:
            click.echo(f"degenerate: {exc}", err=True)
            sys.exit(3)
        except DivergenceError as exc:
            click.echo(f"divergence: {exc}", err=True)
            sys.exit(4)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _seed_option():
    return click.option(
        "--seed",
        type=int,
        default=42,
        show_default=True,
        envvar="VC_GUARD_SEED",
        help="Master seed (env: VC_GUARD_SEED).",
    )


def _positive(name):
    def check(ctx, param, value):
        if value is not None and value <= 0:
            raise click.BadParameter(f"{name} must be positive")
        return value

    return check


def _parse_int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip() != ""]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


def _parse_float_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip() != ""]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated reals, got {value!r}")


def _plot_path(out: Path) -> Path:
    return out.with_suffix(".png")


@click.group()
@click.version_option(package_name="vcguard")
def main():
    """Label-free drift monitoring via volatility in certainty (VC)."""


# --- vc ---------------------------------------------------------------------


@main.command("vc")
@click.option("--probs", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Probability CSV with header p0,p1,...")
@click.option("--epsilon0", type=float, default=1e-6, show_default=True,
              callback=_positive("epsilon0"), help="Log-ratio stabilizer.")
@click.option("--trim-low", type=float, default=0.2, show_default=True)
@click.option("--trim-high", type=float, default=0.8, show_default=True)
@click.option("--paper-normalization", is_flag=True,
              help="Divide by (trim_high - trim_low) * N instead of the included count.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Optional JSON report path.")
@_translate_errors
def cmd_vc(probs, epsilon0, trim_low, trim_high, paper_normalization, out):
    """Compute VC over a probability CSV (no labels involved)."""
    cfg = VcConfig(
        epsilon0=epsilon0,
        trim_low=trim_low,
        trim_high=trim_high,
        normalization="paper_literal" if paper_normalization else "count_mean",
    )
    matrix = datasets.read_prob_csv(probs)
    report = vc(matrix, cfg)
    click.echo(f"N = {matrix.n_samples}, C = {matrix.n_classes}")
    click.echo(f"epsilon0 = {cfg.epsilon0:g}, trim = ({cfg.trim_low:g}, {cfg.trim_high:g}), "
               f"normalization = {cfg.normalization}")
    click.echo(f"VC = {report.vc!r}")
    click.echo(f"included_count = {report.included_count}")
    if out is not None:
        datasets.write_report_json(report, out)
        click.echo(f"report -> {out}")
    if report.log_vc is None:
        click.echo("log(VC) = undefined (degenerate zero volatility)", err=True)
        sys.exit(3)
    click.echo(f"log(VC) = {report.log_vc!r}")


# --- train ------------------------------------------------------------------


@main.command("train")
@click.option("--train-images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--train-labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--val-images", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--val-labels", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--val-fraction", type=float, default=0.1, show_default=True,
              help="Held-out fraction when no validation files are given.")
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--hidden", default="128,64", show_default=True, callback=_parse_int_list,
              help="Hidden layer widths; input/output widths come from the data.")
@click.option("--lr", type=float, default=0.001, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--label-smoothing", type=float, default=0.1, show_default=True)
@_seed_option()
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Checkpoint path (VCG-MLP-1 container).")
@click.option("--trajectory-out", type=click.Path(dir_okay=False), default=None,
              help="Trajectory JSON path [default: <out>.trajectory.json].")
@click.option("--plot/--no-plot", "do_plot", default=True, show_default=True,
              help="Render the trajectory figure next to the JSON.")
@_translate_errors
def cmd_train(train_images, train_labels, val_images, val_labels, val_fraction,
              epochs, hidden, lr, batch_size, label_smoothing, seed, out,
              trajectory_out, do_plot):
    """Train the feedforward classifier on IDX data.

    Labels feed the training loss and accuracy only; VC itself is label-free.
    """
    if (val_images is None) != (val_labels is None):
        raise InputError("--val-images and --val-labels must be given together")
    images = datasets.load_idx_images(train_images)
    labels = datasets.load_idx_labels(train_labels)
    full = datasets.LabeledDataset(images, labels)
    if val_images is not None:
        train_set = full
        val_set = datasets.LabeledDataset(
            datasets.load_idx_images(val_images), datasets.load_idx_labels(val_labels)
        )
    else:
        if not 0.0 < val_fraction < 1.0:
            raise InputError("--val-fraction must be in (0, 1)")
        n_val = max(1, int(round(val_fraction * len(full))))
        if n_val >= len(full):
            raise InputError("validation split would consume the whole training set")
        order = np.random.default_rng([seed, 0]).permutation(len(full))
        val_set = full.subset(order[:n_val])
        train_set = full.subset(order[n_val:])
    n_classes = int(max(train_set.labels.max(), val_set.labels.max())) + 1
    dims = (train_set.images.shape[1], *hidden, n_classes)
    cfg = TrainConfig(
        learning_rate=lr,
        label_smoothing=label_smoothing,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
    )
    click.echo(f"seed = {seed}")
    click.echo(f"layers = {'x'.join(str(d) for d in dims)}, "
               f"train = {len(train_set)}, val = {len(val_set)}")
    net = Mlp.init(dims, seed=seed)
    trajectory = train(net, train_set, val_set, cfg)
    save_checkpoint(net, out)
    click.echo(f"checkpoint -> {out}")
    traj_path = Path(trajectory_out) if trajectory_out else Path(out).with_suffix(".trajectory.json")
    datasets.write_report_json(_finite_or_null(trajectory.to_payload()), traj_path)
    click.echo(f"trajectory -> {traj_path}")
    if do_plot:
        fig_path = traj_path.with_suffix(".png")
        plots.plot_trajectory(trajectory, fig_path)
        click.echo(f"figure -> {fig_path}")
    for rec in trajectory.records:
        click.echo(f"epoch {rec.epoch}: train_acc = {rec.train_accuracy:.4f}, "
                   f"val_acc = {rec.val_accuracy:.4f}")


def _finite_or_null(payload):
    """Replace NaN/inf with None so reports stay strict JSON."""
    if isinstance(payload, float) and not math.isfinite(payload):
        return None
    if isinstance(payload, dict):
        return {k: _finite_or_null(v) for k, v in payload.items()}
    if isinstance(payload, list):
        return [_finite_or_null(v) for v in payload]
    return payload


# --- attack -----------------------------------------------------------------


@main.command("attack")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, required=True, help="FGSM magnitude in pixel units.")
@click.option("--clip-min", type=float, default=0.0, show_default=True)
@click.option("--clip-max", type=float, default=1.0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Adversarial IDX3 image file (same dims, byte-quantized).")
@click.option("--float-out", type=click.Path(dir_okay=False), default=None,
              help="Optional unquantized .npy sidecar.")
@_translate_errors
def cmd_attack(model, images, labels, epsilon, clip_min, clip_max, out, float_out):
    """Write FGSM-perturbed images for a trained model.

    Labels aim the attack gradient; VC itself is label-free.
    """
    net = load_checkpoint(model)
    _, rows, cols = datasets.idx3_dims(images)
    x = datasets.load_idx_images(images)
    y = datasets.load_idx_labels(labels)
    if x.shape[0] != y.size:
        raise InputError(f"{x.shape[0]} images but {y.size} labels")
    cfg = FgsmConfig(epsilon=epsilon, clip_min=clip_min, clip_max=clip_max)
    grads = input_gradient(net, x, y)
    adv = fgsm(x, grads, cfg)
    datasets.write_idx_images(adv, out, rows=rows, cols=cols)
    click.echo(f"epsilon = {epsilon:g}")
    click.echo(f"adversarial images -> {out}")
    if float_out is not None:
        np.save(float_out, adv)
        click.echo(f"unquantized sidecar -> {float_out}")


# --- sweep ------------------------------------------------------------------


@main.command("sweep")
@click.option("--mode", type=click.Choice(["contamination", "epsilon"]), required=True)
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, default=0.10, show_default=True,
              help="FGSM magnitude for contamination mode.")
@click.option("--levels", default=None, callback=_parse_int_list,
              help="Contamination counts per set [default: 0,5,...,100].")
@click.option("--epsilons", default=None, callback=_parse_float_list,
              help="Epsilon schedule [default: 0.000,0.002,...,0.030].")
@click.option("--set-size", type=int, default=1000, show_default=True,
              help="Subset size per contamination cell.")
@click.option("--trials", type=int, default=1, show_default=True)
@_seed_option()
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--plot/--no-plot", "do_plot", default=True, show_default=True)
@_translate_errors
def cmd_sweep(mode, model, images, labels, epsilon, levels, epsilons, set_size,
              trials, seed, fmt, out, do_plot):
    """Run a contamination or epsilon sweep and report the correlation.

    Labels score the accuracy column and aim the attack; the log-VC column
    is computed label-free.
    """
    net = load_checkpoint(model)
    data = datasets.LabeledDataset(
        datasets.load_idx_images(images), datasets.load_idx_labels(labels)
    )
    click.echo(f"seed = {seed}")
    if mode == "contamination":
        records = harness.contamination_sweep(
            net, data, FgsmConfig(epsilon=epsilon),
            set_size=set_size,
            levels=levels if levels is not None else harness.DEFAULT_CONTAMINATION_COUNTS,
            trials=trials, seed=seed,
        )
    else:
        records = harness.epsilon_sweep(
            net, data,
            epsilons=epsilons if epsilons is not None else harness.DEFAULT_EPSILONS,
        )
    if fmt == "csv":
        datasets.write_sweep_csv(records, out)
    else:
        datasets.write_report_json(records, out)
    click.echo(f"{len(records)} records -> {out}")
    if do_plot:
        fig_path = _plot_path(Path(out))
        plots.plot_sweep(records, fig_path, title=f"{mode} sweep")
        click.echo(f"figure -> {fig_path}")
    pairs = [(r.accuracy, r.log_vc) for r in records if r.log_vc is not None]
    try:
        rho = pearson([a for a, _ in pairs], [v for _, v in pairs]).rho
        click.echo(f"rho = {rho!r}")
    except (DegenerateMetricError, InputError):
        click.echo("rho = n/a")


# --- detect -----------------------------------------------------------------


@main.command("detect")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, default=0.10, show_default=True)
@click.option("--levels", default=None, callback=_parse_float_list,
              help="Contamination fractions [default: 0.01,0.02,0.05,0.10].")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--set-size", type=int, default=1000, show_default=True)
@click.option("--bootstrap-trials", type=int, default=30, show_default=True)
@click.option("--bootstrap-size", type=int, default=200, show_default=True)
@_seed_option()
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--plot/--no-plot", "do_plot", default=True, show_default=True)
@_translate_errors
def cmd_detect(model, images, labels, epsilon, levels, alpha, set_size,
               bootstrap_trials, bootstrap_size, seed, out, do_plot):
    """Find the smallest contamination level VC flags as significant.

    Labels aim the attack; the detection statistic itself is label-free.
    """
    net = load_checkpoint(model)
    data = datasets.LabeledDataset(
        datasets.load_idx_images(images), datasets.load_idx_labels(labels)
    )
    click.echo(f"seed = {seed}")
    result = harness.detect_min_contamination(
        net, data, FgsmConfig(epsilon=epsilon),
        levels=levels if levels is not None else harness.DEFAULT_DETECTION_LEVELS,
        alpha=alpha, set_size=set_size,
        bootstrap_trials=bootstrap_trials, bootstrap_size=bootstrap_size,
        seed=seed,
    )
    datasets.write_report_json(result.to_payload(), out)
    click.echo(f"report -> {out}")
    if do_plot:
        fig_path = _plot_path(Path(out))
        plots.plot_detection(result, fig_path)
        click.echo(f"figure -> {fig_path}")
    for level, p in result.p_values:
        click.echo(f"level = {level:g}: p = {p:.6g}")
    click.echo(f"p* = {'none' if result.p_star is None else format(result.p_star, 'g')}")


# --- correlate ---------------------------------------------------------------


def _load_pairs(path):
    """(accuracy, log_vc) pairs from sweep CSV/JSON or trajectory JSON."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        traj = TrainTrajectory.from_payload(json.loads(text))
        pairs = []
        for rec in traj.records:
            finite = [v for v in rec.val_log_vcs if v is not None and math.isfinite(v)]
            if finite:
                pairs.append((rec.val_accuracy, sum(finite) / len(finite)))
        return pairs
    records = datasets.read_sweep_records(path)
    return [(r.accuracy, r.log_vc) for r in records if r.log_vc is not None]


def _rho_or_none(pairs):
    try:
        return pearson([a for a, _ in pairs], [v for _, v in pairs]).rho
    except (DegenerateMetricError, InputError):
        return None


@main.command("correlate")
@click.option("--records", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Sweep CSV/JSON or trajectory JSON.")
@click.option("--threshold", type=float, default=None,
              help="Also split the correlation at this accuracy.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Optional JSON summary path.")
@_translate_errors
def cmd_correlate(records, threshold, out):
    """Pearson correlation between accuracy and log(VC) in a records file."""
    pairs = _load_pairs(records)
    rho = _rho_or_none(pairs)
    if rho is None:
        click.echo("warning: correlation undefined (constant or too few records)", err=True)
        click.echo("rho = n/a")
    else:
        click.echo(f"rho = {rho!r}")
    summary = {"rho": rho, "n": len(pairs)}
    if threshold is not None:
        above = [p for p in pairs if p[0] > threshold]
        below = [p for p in pairs if p[0] <= threshold]
        rho_above = _rho_or_none(above) if len(above) >= 3 else None
        rho_below = _rho_or_none(below) if len(below) >= 3 else None
        click.echo(f"rho_above = {'n/a' if rho_above is None else repr(rho_above)} "
                   f"(n = {len(above)})")
        click.echo(f"rho_below = {'n/a' if rho_below is None else repr(rho_below)} "
                   f"(n = {len(below)})")
        summary.update(
            threshold=threshold,
            rho_above=rho_above, n_above=len(above),
            rho_below=rho_below, n_below=len(below),
        )
    if out is not None:
        datasets.write_report_json(summary, out)
        click.echo(f"summary -> {out}")


if __name__ == "__main__":
    main()
