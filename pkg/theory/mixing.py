"""
Randomized check of the convex-mixing inequality for cross-entropy over logits.

Two forms are checked:

  stated:    |l(sum g u) - l(sum g v)| <= sum g |l(u_a) - l(v_a)|
  lipschitz: |l(sum g u) - l(sum g v)| <= sqrt(2) * sum g ||u_a - v_a||_2

The stated form does not hold for cross-entropy in general (see
STATED_COUNTEREXAMPLE); the report counts violations instead of asserting.
The lipschitz form holds because the logit gradient softmax - onehot has
l2 norm at most sqrt(2).
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from model.mlp import per_example_ce
from numeric.core import RngStream, STREAM_THEORY
from numeric.errors import ConfigError

log = logging.getLogger(__name__)

SLACK_TOL = 1e-9
CE_LIPSCHITZ = math.sqrt(2.0)
FORMS = ("stated", "lipschitz")

# K=2, label 0, two learners at gamma=(0.5, 0.5): the mixed margins move by
# 0.1 where the loss slope is ~1, but the only learner that moves sits where
# the slope is ~0.5.
STATED_COUNTEREXAMPLE = {
    "u": [[0.0, 10.0], [0.0, 0.0]],
    "v": [[0.0, 10.0], [0.2, 0.0]],
    "gamma": [0.5, 0.5],
    "label": 0,
}


def _ce(logits, label):
    return float(per_example_ce(np.asarray(logits, dtype=np.float64)[None, :], [label])[0])


def mixing_slack(u, v, gamma, label, form="stated"):
    """
    Right-hand side minus left-hand side of the mixing inequality; negative means violated.

    Args:
        u (array): |A| x K logits of the first prediction set
        v (array): |A| x K logits of the second prediction set
        gamma (array): nonnegative weights summing to 1
        label (int): true class
        form (str): "stated" or "lipschitz"

    Returns:
        float: the slack
    """
    if form not in FORMS:
        raise ConfigError(f"unknown mixing form {form!r}, expected one of {FORMS}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(gamma, dtype=np.float64)
    lhs = abs(_ce(g @ u, label) - _ce(g @ v, label))
    if form == "stated":
        rhs = sum(ga * abs(_ce(ua, label) - _ce(va, label)) for ga, ua, va in zip(g, u, v))
    else:
        rhs = CE_LIPSCHITZ * sum(ga * float(np.linalg.norm(ua - va)) for ga, ua, va in zip(g, u, v))
    return float(rhs - lhs)


@dataclass
class MixingReport:
    form: str
    trials: int
    violations: int
    worst_slack: float
    counterexample: dict = None

    @property
    def holds(self):
        return self.violations == 0

    def to_dict(self):
        return {**asdict(self), "holds": self.holds}


def check_mixing_lemma(trials=10_000, seed=0, form="stated", max_classes=5, max_learners=4, tol=SLACK_TOL):
    """Randomized trials of the mixing inequality; returns counts and the worst case found."""
    rng = RngStream(seed, STREAM_THEORY, 1_000_000)
    violations = 0
    worst = math.inf
    counterexample = None
    for _ in range(trials):
        K = int(rng.integers(2, max_classes + 1))
        A = int(rng.integers(1, max_learners + 1))
        gamma = rng.generator.dirichlet(np.ones(A))
        scale = rng.uniform(0.1, 5.0)
        u = scale * rng.normal((A, K))
        v = u + scale * rng.uniform(0.0, 1.0) * rng.normal((A, K))
        label = int(rng.integers(0, K))
        slack = mixing_slack(u, v, gamma, label, form)
        if slack < worst:
            worst = slack
        if slack < -tol:
            violations += 1
            if counterexample is None or slack <= worst:
                counterexample = {"u": u.tolist(), "v": v.tolist(), "gamma": gamma.tolist(),
                                  "label": label, "slack": slack}
    if violations:
        log.warning("mixing inequality (%s form) violated in %d of %d trials, worst slack %.3g",
                    form, violations, trials, worst)
    return MixingReport(form, trials, violations, worst if trials else 0.0, counterexample)
