"""
Empirical check of the expected-error bound for the global learner.

The test family is two-class logistic regression with parameters in an l2
ball. Learner 1 sees clean inputs, learner 2 sees inputs shifted by a fixed
label-dependent perturbation. Losses are scaled into [0, 1].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from tqdm import tqdm

from aggregate.schedules import GammaSchedule, SyncSchedule, gamma_at, should_redistribute
from numeric.core import RngStream, STREAM_THEORY
from numeric.errors import DomainError, NumericError
from theory.regret import RegretLedger, regret

log = logging.getLogger(__name__)

RADIUS = 2.0
INPUT_CLIP = 3.0
SHIFT = 0.5
HELDOUT_DRAWS = 10_000
RESIDUAL_TOL = 1e-8
MAX_POLISH_ITERS = 200_000


@dataclass(frozen=True)
class ConvexTask:
    """Logistic loss log(1 + exp(-s * w.z)) / scale on rows z of `features`, labels s in {-1, +1}."""

    features: np.ndarray
    labels: np.ndarray
    radius: float = RADIUS
    scale: float = 1.0

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        s = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if z.shape[0] != s.shape[0]:
            raise DomainError(f"{z.shape[0]} feature rows for {s.shape[0]} labels")
        if not np.all(np.abs(s) == 1.0):
            raise DomainError("convex task labels must be -1 or +1")
        object.__setattr__(self, "features", z)
        object.__setattr__(self, "labels", s)

    @property
    def dim(self):
        return self.features.shape[1]

    def losses(self, w):
        return np.logaddexp(0.0, -self.labels * (self.features @ w)) / self.scale

    def mean_loss(self, w):
        return float(np.mean(self.losses(w)))

    def mean_grad(self, w):
        margins = self.labels * (self.features @ w)
        weights = -self.labels * _sigmoid(-margins)
        return self.features.T @ weights / (self.scale * self.features.shape[0])

    def smoothness(self):
        """Upper bound on the Hessian norm of mean_loss."""
        gram = self.features.T @ self.features / self.features.shape[0]
        return max(float(np.linalg.eigvalsh(gram)[-1]) / (4.0 * self.scale), 1e-12)

    def head(self, T):
        return ConvexTask(self.features[:T], self.labels[:T], self.radius, self.scale)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def project_ball(w, radius):
    norm = float(np.linalg.norm(w))
    return w if norm <= radius else w * (radius / norm)


def minimize_over_ball(task, tol=RESIDUAL_TOL, max_iters=MAX_POLISH_ITERS):
    """
    Minimizer of task.mean_loss over the ball of task.radius.

    SLSQP gets close; projected gradient steps at 1/L then polish until the
    gradient-mapping norm drops below `tol`.

    Returns:
        np.ndarray: the minimizer
    """
    r2 = task.radius ** 2
    start = np.zeros(task.dim)
    result = minimize(
        task.mean_loss,
        start,
        jac=task.mean_grad,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda w: r2 - w @ w, "jac": lambda w: -2.0 * w}],
        options={"ftol": 1e-14, "maxiter": 500},
    )
    w = project_ball(np.asarray(result.x, dtype=np.float64), task.radius)
    L = task.smoothness()
    for _ in range(max_iters):
        nxt = project_ball(w - task.mean_grad(w) / L, task.radius)
        residual = L * float(np.linalg.norm(w - nxt))
        w = nxt
        if residual < tol:
            return w
    raise NumericError(f"convex oracle did not reach gradient-mapping norm {tol} in {max_iters} iterations")


def oracle_best_fixed(task, T=None):
    """Cumulative loss over the first T rounds of the best single parameter in the ball."""
    if T is not None:
        task = task.head(T)
    w = minimize_over_ball(task)
    return float(math.fsum(task.losses(w)))


def concentration_term(T, delta):
    """2 * sqrt((2 / T) * ln(1 / delta))."""
    if T <= 0 or not 0.0 < delta < 1.0:
        raise DomainError(f"need T > 0 and 0 < delta < 1, got T={T}, delta={delta}")
    return 2.0 * math.sqrt((2.0 / T) * math.log(1.0 / delta))


@dataclass
class BoundReport:
    trials: int
    delta: float
    T: int
    lhs: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    lhs_average: list = field(default_factory=list)
    regret_per_round: list = field(default_factory=list)
    concentration: float = 0.0
    violation_fraction: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OnlineSetup:
    """Settings of the convex online run inside each trial."""

    ema_decay: float = 0.9
    gamma: float = 0.5
    t_prime_fraction: float = 0.625
    c: int = 5
    eta0: float = None  # None: radius / Lipschitz constant


def _draw(rng, count, direction):
    s = np.where(rng.uniform(0.0, 1.0, count) < 0.5, -1.0, 1.0)
    x = np.clip(s[:, None] * direction + rng.normal((count, 2)), -INPUT_CLIP, INPUT_CLIP)
    shifted = np.clip(x - SHIFT * s[:, None] * direction, -INPUT_CLIP, INPUT_CLIP)
    with_bias = lambda arr: np.hstack([arr, np.ones((count, 1))])
    return with_bias(x), with_bias(shifted), s


def loss_scale(radius=RADIUS):
    """Largest possible unscaled loss, so scaled losses stay within [0, 1]."""
    zmax = math.sqrt(2 * INPUT_CLIP ** 2 + 1.0)
    return float(np.logaddexp(0.0, radius * zmax))


def run_trial(trial, T, delta, seed, setup=OnlineSetup(), heldout=HELDOUT_DRAWS):
    """
    One bound trial: online learners, mixing, EMA and redistribution on a fresh convex family.

    Returns:
        dict: lhs, rhs, lhs_average and regret/T for this trial
    """
    rng = RngStream(seed, STREAM_THEORY, trial)
    angle = rng.uniform(0.0, 2 * np.pi)
    direction = np.array([math.cos(angle), math.sin(angle)])
    scale = loss_scale()
    lipschitz = math.sqrt(2 * INPUT_CLIP ** 2 + 1.0) / scale
    eta0 = setup.eta0 if setup.eta0 is not None else RADIUS / lipschitz

    clean, shifted, s = _draw(rng, T, direction)
    tasks = [ConvexTask(clean, s, RADIUS, scale), ConvexTask(shifted, s, RADIUS, scale)]
    gamma = GammaSchedule.constant(setup.gamma)
    sync = SyncSchedule(int(round(setup.t_prime_fraction * T)), setup.c, T)

    w = [np.zeros(3) for _ in tasks]
    theta_g = np.zeros(3)
    trajectory = []
    realized = np.zeros((len(tasks), T))
    for t in range(T):
        for a, task in enumerate(tasks):
            z, label = task.features[t], task.labels[t]
            realized[a, t] = float(np.logaddexp(0.0, -label * (z @ w[a]))) / scale
            grad = -label * _sigmoid(-label * (z @ w[a])) * z / scale
            w[a] = project_ball(w[a] - eta0 / math.sqrt(t + 1) * grad, RADIUS)
        g1 = gamma_at(gamma, t / T)
        mixed = g1 * w[0] + (1.0 - g1) * w[1]
        theta_g = setup.ema_decay * theta_g + (1.0 - setup.ema_decay) * mixed
        trajectory.append(theta_g)
        if should_redistribute(sync, t + 1):
            w = [theta_g.copy() for _ in tasks]

    if realized.min() < 0.0 or realized.max() > 1.0:
        raise DomainError(f"trial {trial}: loss outside [0, 1]")
    ledger = RegretLedger(realized, [oracle_best_fixed(task) for task in tasks], bounded=True)
    regret_t = regret(ledger) / T

    test_clean, test_shifted, test_s = _draw(rng, heldout, direction)
    pooled = ConvexTask(np.vstack([test_clean, test_shifted]), np.concatenate([test_s, test_s]), RADIUS, scale)
    theta_ref = minimize_over_ball(pooled)
    average = np.mean(trajectory, axis=0)
    return {
        "lhs": pooled.mean_loss(theta_g),
        "rhs": pooled.mean_loss(theta_ref) + regret_t + concentration_term(T, delta),
        "lhs_average": pooled.mean_loss(average),
        "regret_per_round": regret_t,
    }


def check_theorem1(trials=200, delta=0.1, T=100, seed=0, workers=1, setup=OnlineSetup(),
                   heldout=HELDOUT_DRAWS, progress=False):
    """
    Fraction of trials where the global learner's held-out loss exceeds the bound.

    Args:
        trials (int): independent convex families
        delta (float): confidence parameter in (0, 1)
        T (int): online rounds per trial
        seed (int): master seed; trial i uses its own stream
        workers (int): trials run in a thread pool when > 1
        setup (OnlineSetup): mixing, EMA and sync settings
        heldout (int): draws per task for the expectation estimates
        progress (bool): show a tqdm bar

    Returns:
        BoundReport: per-trial lhs/rhs and the violation fraction
    """
    report = BoundReport(trials=trials, delta=delta, T=T, concentration=concentration_term(T, delta))
    run = lambda i: run_trial(i, T, delta, seed, setup, heldout)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(run, range(trials)), total=trials, desc="bound", disable=not progress))
    else:
        results = [run(i) for i in tqdm(range(trials), desc="bound", disable=not progress)]
    for res in results:
        report.lhs.append(res["lhs"])
        report.rhs.append(res["rhs"])
        report.lhs_average.append(res["lhs_average"])
        report.regret_per_round.append(res["regret_per_round"])
    violations = sum(1 for lhs, rhs in zip(report.lhs, report.rhs) if lhs > rhs)
    report.violation_fraction = violations / trials if trials else 0.0
    log.info("bound check: %d/%d violations at delta=%.3g, T=%d", violations, trials, delta, T)
    return report
