import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from aggregate.generalist import mixing_weights, train_generalist
from model.mlp import forward, per_example_ce
from numeric.core import RngStream, STREAM_THEORY
from numeric.errors import DomainError, LabError, NumericError

log = logging.getLogger(__name__)

MAX_EXAMPLES = 64


@dataclass
class StabilityProbe:
    """Replace-one stability estimates for the base learners and the global learner.

    ratio is (global_eps - eps_oplus) / drift, None when drift is 0.
    within_kappa checks global_eps <= eps_oplus + kappa * drift.
    """

    per_task_eps: list
    global_eps: float
    drift: float
    eps_oplus: float
    gamma: list
    kappa: float
    ratio: float = None
    within_kappa: bool = True
    swaps: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _losses(template, params, data):
    return per_example_ce(forward(template.with_params(params), data.test_x), data.test_y)


def _run(config, data, trial):
    try:
        return train_generalist(config, data)
    except NumericError as err:
        raise NumericError(f"stability trial {trial} diverged: {err}") from err


def stability_probe(config, dataset, replacements, seed=0, identical=False, kappa=1.0):
    """
    Estimate replace-one stability by full retraining.

    Each swap overwrites one training example with a copy of another one
    (or with itself when `identical`), retrains everything from the same
    seeds, and records the largest change of per-example natural
    cross-entropy on the test split.

    Args:
        config (GeneralistConfig): training setup, reused for every retrain
        dataset (DatasetHandle): at most 64 training examples
        replacements (int): number of swaps
        seed (int): picks which examples are swapped
        identical (bool): swap each example with itself (a no-op)
        kappa (float): tolerance factor for the drift check

    Returns:
        StabilityProbe: epsilons, drift and the derived quantities
    """
    n = dataset.train_x.shape[0]
    if n > MAX_EXAMPLES:
        raise DomainError(f"stability probe needs at most {MAX_EXAMPLES} training examples, got {n}")
    if replacements < 1:
        raise DomainError(f"need at least one replacement, got {replacements}")

    base = _run(config, dataset, "base")
    template = base.model
    base_learner = [_losses(template, p, dataset) for p in base.final_learner_params]
    base_global = _losses(template, base.state.theta_g, dataset)

    rng = RngStream(seed, STREAM_THEORY, 2)
    per_task = np.zeros(len(base_learner))
    global_eps = 0.0
    swaps = []
    for trial in range(replacements):
        j = int(rng.integers(0, n))
        if identical or n == 1:
            k = j
        else:
            k = int((j + rng.integers(1, n)) % n)
        swapped = dataset.with_train_example(j, dataset.train_x[k], dataset.train_y[k])
        result = _run(config, swapped, trial)
        for a, params in enumerate(result.final_learner_params):
            diff = np.max(np.abs(_losses(template, params, dataset) - base_learner[a]))
            per_task[a] = max(per_task[a], float(diff))
        global_eps = max(global_eps, float(np.max(np.abs(_losses(template, result.state.theta_g, dataset) - base_global))))
        swaps.append([j, k])

    gamma = mixing_weights(config, config.total_epochs - 1)
    eps_oplus = float(sum(g * e for g, e in zip(gamma, per_task)))
    theta_bar = base.state.theta_prev.values
    drift = float(sum(g * np.sum((p.values - theta_bar) ** 2) for g, p in zip(gamma, base.final_learner_params)))
    if not np.isfinite(global_eps):
        raise LabError("global stability estimate is not finite")
    probe = StabilityProbe(
        per_task_eps=per_task.tolist(),
        global_eps=global_eps,
        drift=drift,
        eps_oplus=eps_oplus,
        gamma=list(gamma),
        kappa=kappa,
        ratio=(global_eps - eps_oplus) / drift if drift > 0 else None,
        within_kappa=global_eps <= eps_oplus + kappa * drift,
        swaps=swaps,
    )
    log.info("stability: eps_g=%.4g eps_oplus=%.4g drift=%.4g", global_eps, eps_oplus, drift)
    return probe
