import argparse
import json
import logging
import os
import sys

import coloredlogs
import yaml
from rich.console import Console
from rich.table import Table

from harness.checkpoint import load_checkpoint
from harness.config import eval_attacks, generalist_config, get_config, load_config
from harness.datasets import gen_gaussians
from harness.experiment import (
    adversarial_examples,
    compare,
    make_evaluator,
    model_from_checkpoint,
    parse_sweep,
    run_experiment,
    save_examples,
    sweep,
)
from harness.metrics import class_union, write_jsonl
from numeric.errors import ConfigError, LabError
from theory.bounds import check_theorem1
from theory.mixing import check_mixing_lemma
from theory.stability import stability_probe

log = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class LabArgumentParser(argparse.ArgumentParser):
    """Argument errors exit with the config-error code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        overrides[key] = yaml.safe_load(raw)
    return overrides


def config_from_args(args):
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["experiment.seed"] = args.seed
    return load_config(args.config, overrides)


def metrics_table(records, title="Metrics"):
    table = Table(title=title)
    table.add_column("Epoch", style="cyan")
    table.add_column("Natural", style="green")
    table.add_column("PGD inf", style="yellow")
    table.add_column("PGD 2", style="yellow")
    table.add_column("Union", style="magenta")
    for r in records:
        table.add_row(str(r.epoch), f"{100 * r.natural_acc:.2f}", f"{100 * r.robust_acc_linf:.2f}",
                      f"{100 * r.robust_acc_l2:.2f}", f"{100 * r.union:.2f}")
    return table


def cmd_train(args):
    config = config_from_args(args)
    out_dir = args.out or os.path.join("runs", config["experiment.name"])
    output = run_experiment(config, out_dir, resume_path=args.checkpoint)
    if output.records:
        console.print(metrics_table(output.records[-1:], title=f"Final metrics ({output.method})"))
    console.print(f"[bold green]Run written to[/bold green] {out_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    checkpoint = load_checkpoint(args.checkpoint)
    config, data, model = model_from_checkpoint(checkpoint)
    record = make_evaluator(config, data)(model, checkpoint.epoch)
    console.print(metrics_table([record], title=f"Evaluation of {args.checkpoint}"))
    classes = Table(title="Per-class accuracy")
    classes.add_column("Class", style="cyan")
    classes.add_column("Count")
    classes.add_column("Natural", style="green")
    classes.add_column("Union", style="magenta")
    for k, (total, correct, union) in enumerate(zip(record.per_class_total, record.per_class_correct,
                                                    class_union(record))):
        natural = f"{100 * correct / total:.2f}" if total else "-"
        classes.add_row(str(k), str(total), natural, "-" if union is None else f"{100 * union:.2f}")
    console.print(classes)
    for name, acc in record.ood.items():
        console.print(f"OOD [bold]{name}[/bold]: {100 * acc:.2f}")
    if args.out:
        write_jsonl([record], args.out)
    return EXIT_OK


def cmd_attack(args):
    checkpoint = load_checkpoint(args.checkpoint)
    config, data, model = model_from_checkpoint(checkpoint)
    attacks = [spec for spec in eval_attacks(config) if args.norm == "both" or spec.norm.value == args.norm]
    arrays = adversarial_examples(model, data, attacks)
    out = args.out or "adversarial.npz"
    save_examples(out, arrays)
    console.print(f"Wrote {data.test_x.shape[0]} adversarial examples per norm to [bold]{out}[/bold]")
    return EXIT_OK


def stability_config(config):
    """Small generalist run for the stability probe, sized by the theory.* keys."""
    n = config["theory.stability_n"]
    data = gen_gaussians(config["experiment.seed"], n, config["data.d"], config["data.K"],
                         config["data.separation"], sigma=config["data.sigma"])
    small = get_config({**config, "experiment.epochs": config["theory.stability_epochs"],
                        "sync.t_prime": None, "experiment.workers": 1})
    return generalist_config(small, data), data


def cmd_verify_theory(args):
    config = config_from_args(args)
    trials = args.trials or config["theory.trials"]
    bound = check_theorem1(trials=trials, delta=config["theory.delta"], T=config["theory.T"],
                           seed=config["experiment.seed"], workers=config["experiment.workers"], progress=True)
    stated = check_mixing_lemma(config["theory.mixing_trials"], seed=config["experiment.seed"], form="stated")
    lipschitz = check_mixing_lemma(config["theory.mixing_trials"], seed=config["experiment.seed"], form="lipschitz")
    gconfig, data = stability_config(config)
    probe = stability_probe(gconfig, data, config["theory.stability_replacements"], seed=config["experiment.seed"],
                            kappa=config["theory.kappa"])

    table = Table(title="Theory checks")
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    table.add_column("Detail")
    allowed = config["theory.delta"] + 0.05
    table.add_row("Expected-error bound", "pass" if bound.violation_fraction <= allowed else "FAIL",
                  f"violations {bound.violation_fraction:.3f} (allowed {allowed:.3f}) over {bound.trials} trials")
    for report in (stated, lipschitz):
        table.add_row(f"Mixing inequality ({report.form})", "holds" if report.holds else "violated",
                      f"{report.violations}/{report.trials} violations, worst slack {report.worst_slack:.3g}")
    table.add_row("Stability probe", "within kappa" if probe.within_kappa else "exceeds kappa",
                  f"eps_g {probe.global_eps:.4g}, eps_oplus {probe.eps_oplus:.4g}, drift {probe.drift:.4g}")
    console.print(table)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        reports = {"bound.json": bound.to_dict(), "mixing_stated.json": stated.to_dict(),
                   "mixing_lipschitz.json": lipschitz.to_dict(), "stability.json": probe.to_dict()}
        for name, payload in reports.items():
            with open(os.path.join(args.out, name), "w") as f:
                json.dump(payload, f, indent=2)
    return EXIT_OK


def cmd_compare(args):
    config = config_from_args(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = args.out or "compare.csv"
    if args.sweep:
        key, values = parse_sweep(args.sweep)
        rows = sweep(config, key, values, out, seeds=seeds)
    else:
        rows = compare(config, out, seeds=seeds)
    table = Table(title="Method comparison (median over seeds)")
    for column in rows[0]:
        table.add_column(column)
    for row in rows[1:]:
        table.add_row(*row)
    console.print(table)
    console.print(f"CSV written to [bold]{out}[/bold]")
    return EXIT_OK


def build_parser():
    parser = LabArgumentParser(prog="lab", description="Desk-scale adversarial training lab")
    parser.add_argument("--log-level", default="INFO", help="Logging level (DEBUG, INFO, WARNING, ...)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

    train = sub.add_parser("train", help="Train the configured method")
    train.add_argument("--config", type=str, default=None, help="Config file")
    train.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
    train.add_argument("--out", type=str, default=None, help="Output directory")
    train.add_argument("--checkpoint", type=str, default=None, help="Resume from this checkpoint")
    train.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("evaluate", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=str, required=True, help="Checkpoint file")
    evaluate.add_argument("--out", type=str, default=None, help="Write the record as JSONL")
    evaluate.set_defaults(func=cmd_evaluate)

    attack = sub.add_parser("attack", help="Write adversarial test examples for a checkpoint")
    attack.add_argument("--checkpoint", type=str, required=True, help="Checkpoint file")
    attack.add_argument("--out", type=str, default=None, help="Output .npz file")
    attack.add_argument("--norm", choices=["linf", "l2", "both"], default="both", help="Attack norm")
    attack.set_defaults(func=cmd_attack)

    theory = sub.add_parser("verify-theory", help="Run the theory checks")
    theory.add_argument("--config", type=str, default=None, help="Config file")
    theory.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
    theory.add_argument("--out", type=str, default=None, help="Directory for JSON reports")
    theory.add_argument("--trials", type=int, default=None, help="Override theory.trials")
    theory.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key")
    theory.set_defaults(func=cmd_verify_theory)

    comp = sub.add_parser("compare", help="Compare generalist variants and baselines")
    comp.add_argument("--config", type=str, default=None, help="Config file")
    comp.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
    comp.add_argument("--out", type=str, default=None, help="CSV output path")
    comp.add_argument("--seeds", type=str, default=None, help="Comma-separated seeds")
    comp.add_argument("--sweep", type=str, default=None, metavar="KEY=V1,V2,...",
                      help="Repeat the comparison for each value of one config key")
    comp.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key")
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    """Run the CLI and return its exit code: 0 ok, 1 config error, 2 runtime error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code in (None, 0) else EXIT_CONFIG
    coloredlogs.install(level=args.log_level.upper(), fmt="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    except (LabError, OSError) as err:
        log.error("%s: %s", type(err).__name__, err)
        return EXIT_RUNTIME
    except Exception:
        log.exception("unexpected failure")
        return EXIT_RUNTIME
