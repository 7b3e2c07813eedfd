"""
Flat `key = value` experiment configuration.

Each right-hand side is read with yaml.safe_load, so numbers, booleans,
null and lists like [16] work as expected. `#` starts a comment.
"""

import json
import logging

import yaml

from aggregate.baselines import BaselineConfig, BaselineMode
from aggregate.generalist import GeneralistConfig, Variant
from aggregate.schedules import GammaSchedule, SyncSchedule, T_PRIME_FRACTION
from attack.pgd import evaluation_attack
from harness.datasets import gen_gaussians, gen_rings
from harness.idx import load_idx
from learn.learner import AttackConfig, LearnerSpec, Task
from numeric.core import Norm
from numeric.errors import ConfigError

log = logging.getLogger(__name__)

METHODS = ("generalist",) + tuple(mode.value for mode in BaselineMode)

_LEARNER_DEFAULTS = {
    "optimizer": "sgd_momentum",
    "lr": 0.1,
    "momentum": 0.9,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps_hat": 1e-8,
    "weight_decay": 0.0,
    "wa_decay": None,
    "constant_until": None,  # None: a third of the run
    "terminal_fraction": 0.0,
}

# Default lab configuration
DEFAULT_CONFIG = {
    "experiment.name": "desk",
    "experiment.seed": 0,
    "experiment.method": "generalist",
    "experiment.epochs": 40,
    "experiment.batch_size": 32,
    "experiment.workers": 1,
    "experiment.wall_clock": True,
    "experiment.checkpoint_every": 0,
    "data.source": "gaussians",
    "data.n": 400,
    "data.n_test": None,
    "data.d": 8,
    "data.K": 2,
    "data.separation": 0.6,
    "data.sigma": 0.1,
    "data.images": None,
    "data.labels": None,
    "data.test_images": None,
    "data.test_labels": None,
    "data.test_fraction": 0.2,
    "model.hidden": [16],
    "model.activation": "relu",
    "generalist.variant": "D_nat_linf",
    "generalist.gamma1": "1.0-1.0-1.0-0.0",
    "generalist.b": 0.5,
    "generalist.ema_decay": 0.999,
    "generalist.shared_init": True,
    "generalist.reset_optimizer": True,
    "generalist.aggregate_wa": False,
    "generalist.shared_attack_streams": False,
    "sync.t_prime": None,  # None: 62.5% of the run
    "sync.c": 5,
    "attack.linf.epsilon": 0.05,
    "attack.linf.step_size": None,
    "attack.linf.steps": 10,
    "attack.linf.random_start": True,
    "attack.l2.epsilon": 0.25,
    "attack.l2.step_size": None,
    "attack.l2.steps": 10,
    "attack.l2.random_start": True,
    "eval.linf.epsilon": None,  # None: same budget as training
    "eval.linf.step_size": None,
    "eval.linf.steps": 20,
    "eval.l2.epsilon": None,
    "eval.l2.step_size": None,
    "eval.l2.steps": 20,
    "compare.methods": ["generalist:D_nat_linf", "generalist:D_linf_l2", "generalist:T_nat_linf_l2",
                        "at_vanilla", "at_halfhalf", "at_avg_norm"],
    "compare.seeds": [0, 1, 2, 3, 4],
    "corrupt.kinds": [],
    "corrupt.severity": 5,
    "theory.trials": 200,
    "theory.delta": 0.1,
    "theory.T": 100,
    "theory.mixing_trials": 10000,
    "theory.stability_n": 48,
    "theory.stability_epochs": 4,
    "theory.stability_replacements": 4,
    "theory.kappa": 1.0,
}
for _task in Task:
    if _task is Task.JOINT:
        continue
    for _key, _value in _LEARNER_DEFAULTS.items():
        DEFAULT_CONFIG[f"learner.{_task.value}.{_key}"] = _value


def _as_number(value):
    # yaml.safe_load reads exponent floats without a dot ("1e-08") as strings.
    try:
        return float(value)
    except ValueError:
        return value


def _check_type(key, value):
    default = DEFAULT_CONFIG[key]
    if isinstance(value, str) and (default is None or (isinstance(default, (int, float)) and not isinstance(default, bool))):
        value = _as_number(value)
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        if isinstance(default, int) and not isinstance(value, int) and not float(value).is_integer():
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool):
            value = value if isinstance(value, int) else int(value)
    elif isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key} expects a list, got {value!r}")
    elif isinstance(default, str):
        value = str(value)
    return value


def get_config(overrides=None):
    """Defaults merged with overrides; unknown keys raise ConfigError."""
    config = DEFAULT_CONFIG.copy()
    for key, value in (overrides or {}).items():
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key {key!r}")
        config[key] = _check_type(key, value)
    return config


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError as err:
            raise ConfigError(f"{source}:{lineno}: cannot parse value {raw!r}: {err}") from err
    return values


def load_config(path=None, overrides=None):
    """
    Read a config file and apply overrides on top.

    Args:
        path (str): config file, or None for defaults only
        overrides (dict): flat key -> value pairs applied last

    Returns:
        dict: complete flat configuration
    """
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                values = parse_config_text(f.read(), source=path)
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    values.update(overrides or {})
    config = get_config(values)
    log.debug("loaded config %s with %d overrides", path, len(values))
    return config


def dump_config(config):
    return "".join(f"{key} = {json.dumps(config[key])}\n" for key in sorted(config))


def layer_sizes(config, data):
    return [data.d, *[int(h) for h in config["model.hidden"]], data.K]


def build_dataset(config, seed=None):
    seed = config["experiment.seed"] if seed is None else seed
    source = config["data.source"]
    if source == "gaussians":
        return gen_gaussians(seed, config["data.n"], config["data.d"], config["data.K"], config["data.separation"],
                             sigma=config["data.sigma"], n_test=config["data.n_test"])
    if source == "rings":
        return gen_rings(seed, config["data.n"], config["data.d"], config["data.K"], n_test=config["data.n_test"])
    if source == "idx":
        if not config["data.images"] or not config["data.labels"]:
            raise ConfigError("data.source = idx needs data.images and data.labels")
        return load_idx(config["data.images"], config["data.labels"], config["data.test_images"],
                        config["data.test_labels"], config["data.test_fraction"], seed)
    raise ConfigError(f"unknown data.source {source!r}")


def training_attacks(config):
    attacks = {}
    for norm in Norm:
        prefix = f"attack.{norm.value}"
        attacks[norm] = AttackConfig(
            epsilon=float(config[f"{prefix}.epsilon"]),
            step_size=config[f"{prefix}.step_size"],
            steps=config[f"{prefix}.steps"],
            random_start=config[f"{prefix}.random_start"],
        )
    return attacks


def eval_attacks(config):
    out = []
    for norm in Norm:
        epsilon = config[f"eval.{norm.value}.epsilon"]
        if epsilon is None:
            epsilon = config[f"attack.{norm.value}.epsilon"]
        out.append(evaluation_attack(norm, float(epsilon), steps=config[f"eval.{norm.value}.steps"],
                                     step_size=config[f"eval.{norm.value}.step_size"]))
    return out


def learner_spec(config, task):
    task = Task(task)
    prefix = f"learner.{task.value}"
    epochs = config["experiment.epochs"]
    constant_until = config[f"{prefix}.constant_until"]
    return LearnerSpec(
        task=task,
        optimizer=config[f"{prefix}.optimizer"],
        lr0=float(config[f"{prefix}.lr"]),
        momentum=float(config[f"{prefix}.momentum"]),
        beta1=float(config[f"{prefix}.beta1"]),
        beta2=float(config[f"{prefix}.beta2"]),
        eps_hat=float(config[f"{prefix}.eps_hat"]),
        weight_decay=float(config[f"{prefix}.weight_decay"]),
        wa_decay=config[f"{prefix}.wa_decay"],
        constant_until=epochs // 3 if constant_until is None else int(constant_until),
        terminal_fraction=float(config[f"{prefix}.terminal_fraction"]),
        attacks={} if task is Task.NATURAL else training_attacks(config),
    )


def sync_schedule(config):
    epochs = config["experiment.epochs"]
    t_prime = config["sync.t_prime"]
    if t_prime is None:
        t_prime = int(round(T_PRIME_FRACTION * epochs))
    return SyncSchedule(int(t_prime), int(config["sync.c"]), epochs)


def generalist_config(config, data, variant=None, seed=None):
    variant = Variant(variant or config["generalist.variant"])
    return GeneralistConfig(
        variant=variant,
        learners=tuple(learner_spec(config, task) for task in variant.tasks),
        layer_sizes=tuple(layer_sizes(config, data)),
        total_epochs=config["experiment.epochs"],
        batch_size=config["experiment.batch_size"],
        seed=config["experiment.seed"] if seed is None else seed,
        activation=config["model.activation"],
        gamma1=GammaSchedule.from_stages(config["generalist.gamma1"]),
        b=float(config["generalist.b"]),
        ema_decay=float(config["generalist.ema_decay"]),
        sync=sync_schedule(config),
        shared_init=config["generalist.shared_init"],
        reset_optimizer=config["generalist.reset_optimizer"],
        aggregate_wa=config["generalist.aggregate_wa"],
        shared_attack_streams=config["generalist.shared_attack_streams"],
        workers=config["experiment.workers"],
    )


def baseline_config(config, data, mode, seed=None):
    """Baselines train with the adv_linf learner's optimizer settings and every training attack."""
    spec = learner_spec(config, Task.ADV_LINF)
    return BaselineConfig(
        mode=mode,
        learner=spec,
        layer_sizes=tuple(layer_sizes(config, data)),
        total_epochs=config["experiment.epochs"],
        batch_size=config["experiment.batch_size"],
        seed=config["experiment.seed"] if seed is None else seed,
        activation=config["model.activation"],
    )
