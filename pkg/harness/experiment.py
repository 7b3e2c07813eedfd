"""Glue between the flat config, the trainers, metrics files and checkpoints."""

import csv
import logging
import os
import statistics
from dataclasses import dataclass

import numpy as np
import yaml
from tqdm import tqdm

from aggregate.baselines import BaselineMode, train_baseline
from aggregate.generalist import Variant, history_jsonl, snapshot_state, train_generalist
from attack.pgd import pgd_attack
from harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from harness.config import (
    METHODS,
    baseline_config,
    build_dataset,
    dump_config,
    eval_attacks,
    generalist_config,
    get_config,
    layer_sizes,
)
from harness.metrics import evaluate, round_half_up, union_percent, write_jsonl
from model.mlp import init_model
from numeric.core import ParameterVector
from numeric.errors import ConfigError

log = logging.getLogger(__name__)

COMPARE_HEADER = ["Method", "Natural", "PGD_inf", "PGD_2", "Union"]
METRICS_FILE = "metrics.jsonl"
HISTORY_FILE = "history.jsonl"
CHECKPOINT_FILE = "final.ckpt"


@dataclass
class RunOutput:
    method: str
    model: object
    records: list
    checkpoint: Checkpoint


def parse_method(text):
    """'generalist:T_nat_linf_l2' -> ('generalist', Variant); 'at_vanilla' -> ('at_vanilla', None)."""
    name, _, variant = str(text).partition(":")
    if name not in METHODS:
        raise ConfigError(f"unknown method {text!r}, expected one of {METHODS}")
    if name == "generalist":
        return name, Variant(variant) if variant else None
    if variant:
        raise ConfigError(f"baseline {name} takes no variant")
    return name, None


def make_evaluator(config, data):
    attacks = eval_attacks(config)
    corruptions = [(kind, config["corrupt.severity"], config["experiment.seed"]) for kind in config["corrupt.kinds"]]
    wall_clock = config["experiment.wall_clock"]

    def evaluator(model, epoch):
        return evaluate(model, data, attacks, epoch=epoch, corruptions=corruptions, wall_clock=wall_clock)

    return evaluator


def baseline_snapshot(learner, epoch):
    """Checkpoint snapshot of a single baseline model (stored as the global parameters)."""
    params = learner.params.values.copy()
    return {
        "epoch": epoch,
        "theta_g": params,
        "theta_prev": params,
        "history": [],
        "learners": [{
            "params": params,
            "optimizer": learner.optimizer.snapshot(),
            "wa_buffer": None if learner.wa_buffer is None else learner.wa_buffer.values.copy(),
            "rng": learner.rng_states(),
        }],
    }


def run_method(config, data, method, seed=None, out_dir=None, resume=None, progress=False):
    """
    Train one method (a generalist variant or a baseline) and evaluate every epoch.

    Args:
        config (dict): flat configuration
        data (DatasetHandle): dataset to train and evaluate on
        method (str): 'generalist[:variant]' or a baseline mode
        seed (int): overrides experiment.seed for training
        out_dir (str): where periodic checkpoints go, if enabled
        resume (Checkpoint): continue a generalist run from this checkpoint
        progress (bool): show progress bars

    Returns:
        RunOutput: final model, metrics records and final checkpoint
    """
    name, variant = parse_method(method)
    seed = config["experiment.seed"] if seed is None else seed
    run_config = get_config({**config, "experiment.seed": seed})
    evaluator = make_evaluator(run_config, data)
    every = config["experiment.checkpoint_every"]

    if name == "generalist":
        gconfig = generalist_config(run_config, data, variant=variant, seed=seed)
        if variant is not None:
            run_config = get_config({**run_config, "generalist.variant": variant.value})

        def on_epoch(epoch, state, learners, record):
            if out_dir and every and epoch % every == 0 and epoch < gconfig.total_epochs:
                path = os.path.join(out_dir, f"epoch{epoch:04d}.ckpt")
                save_checkpoint(path, Checkpoint(run_config, snapshot_state(state, learners)))

        snapshot = resume.snapshot if resume is not None else None
        result = train_generalist(gconfig, data, evaluator=evaluator, on_epoch=on_epoch, resume=snapshot,
                                  progress=progress)
        checkpoint = Checkpoint(run_config, snapshot_state(result.state, result.learners))
        return RunOutput(method, result.model, result.records, checkpoint)

    if resume is not None:
        raise ConfigError("only generalist runs can resume from a checkpoint")
    bconfig = baseline_config(run_config, data, BaselineMode(name), seed=seed)
    run_config = get_config({**run_config, "experiment.method": name})
    result = train_baseline(name, bconfig, data, evaluator=evaluator, progress=progress)
    checkpoint = Checkpoint(run_config, baseline_snapshot(result.learner, bconfig.total_epochs))
    return RunOutput(method, result.model, result.records, checkpoint)


def run_experiment(config, out_dir, resume_path=None, progress=True):
    """Train the configured method and write metrics, history, config and the final checkpoint."""
    os.makedirs(out_dir, exist_ok=True)
    resume = load_checkpoint(resume_path) if resume_path else None
    if resume is not None and resume.config != config:
        log.warning("resuming with a config that differs from the checkpoint's")
    data = build_dataset(config)
    method = config["experiment.method"]
    if method == "generalist":
        method = f"generalist:{config['generalist.variant']}"
    output = run_method(config, data, method, out_dir=out_dir, resume=resume, progress=progress)

    write_jsonl(output.records, os.path.join(out_dir, METRICS_FILE), append=resume is not None)
    history = output.checkpoint.snapshot["history"]
    if history:
        with open(os.path.join(out_dir, HISTORY_FILE), "w") as f:
            f.write(history_jsonl(history))
    with open(os.path.join(out_dir, "config.cfg"), "w") as f:
        f.write(dump_config(output.checkpoint.config))
    save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE), output.checkpoint)
    log.info("wrote %d metrics records to %s", len(output.records), out_dir)
    return output


def model_from_checkpoint(checkpoint):
    """Rebuild the config, dataset and global model stored in a checkpoint."""
    config = get_config(checkpoint.config)
    data = build_dataset(config)
    sizes = layer_sizes(config, data)
    template = init_model(sizes, config["model.activation"])
    params = ParameterVector(checkpoint.snapshot["theta_g"], template.layout_id)
    return config, data, template.with_params(params)


def compare(config, out_path, methods=None, seeds=None, progress=True):
    """
    Train every method on every seed and write median final metrics as CSV.

    Percentages are rounded to 2 decimals; Union is the mean of the two
    robust columns.

    Returns:
        list[list]: the CSV rows, header first
    """
    methods = methods or config["compare.methods"]
    seeds = seeds or config["compare.seeds"]
    rows = [COMPARE_HEADER]
    for method in tqdm(methods, desc="compare", disable=not progress):
        finals = []
        for seed in seeds:
            data = build_dataset(config, seed=seed)
            output = run_method(config, data, method, seed=seed)
            finals.append(output.records[-1])
        natural = 100 * statistics.median(r.natural_acc for r in finals)
        linf = 100 * statistics.median(r.robust_acc_linf for r in finals)
        l2 = 100 * statistics.median(r.robust_acc_l2 for r in finals)
        linf_r, l2_r = round_half_up(linf), round_half_up(l2)
        rows.append([method, f"{round_half_up(natural):.2f}", f"{linf_r:.2f}", f"{l2_r:.2f}",
                     f"{union_percent(linf_r, l2_r):.2f}"])
        log.info("compare %s: natural %.2f linf %.2f l2 %.2f", method, natural, linf, l2)
    if out_path:
        with open(out_path, "w", newline="") as f:
            csv.writer(f).writerows(rows)
    return rows


def adversarial_examples(model, data, attacks):
    """Adversarial copies of the test inputs, one array per attack norm."""
    out = {"x_clean": data.test_x, "labels": data.test_y}
    for spec in attacks:
        out[f"x_adv_{spec.norm.value}"] = pgd_attack(model, data.test, spec)
    return out


def save_examples(path, arrays):
    np.savez(path, **arrays)


def parse_sweep(text):
    """'sync.c=1,3,5' -> ('sync.c', [1, 3, 5]); values are read as YAML."""
    key, sep, raw = str(text).partition("=")
    values = [yaml.safe_load(v.strip()) for v in raw.split(",") if v.strip()]
    if not sep or not key.strip() or not values:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {text!r}")
    return key.strip(), values


def sweep(config, key, values, out_path, methods=None, seeds=None, progress=True):
    """
    Run compare once per value of one config key, e.g. the communication period.

    Returns:
        list[list]: CSV rows with the swept key as the first column
    """
    rows = [[key] + COMPARE_HEADER]
    for value in values:
        swept = get_config({**config, key: value})
        log.info("sweep %s = %s", key, value)
        rows.extend([str(value)] + row for row in compare(swept, None, methods, seeds, progress)[1:])
    if out_path:
        with open(out_path, "w", newline="") as f:
            csv.writer(f).writerows(rows)
    return rows
