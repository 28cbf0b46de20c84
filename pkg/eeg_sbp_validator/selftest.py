"""Quick built-in checks of the numerical core.

Each check is a small function returning ``True`` on success. They run in a
few seconds and are exposed through ``eeg-sbp-validator selftest``.
"""

import traceback
from collections.abc import Callable

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import norm

from .adaptive import Decision, WindowState, decide
from .autodiff import Tensor, grad, square, sum_all
from .gan import variance_loss
from .harness import direction_agreement, rank_correlation
from .models import (
    ControllerConfig,
    Dataset,
    EmpiricalDistribution,
    FeatureSchema,
    SampleSpace,
    SBPConfig,
    TaskPortion,
    WindowConfig,
)
from .normalize import normalize_dataset
from .transport import exact_assignment_energy, gaussian_transport_oracle, sbp_energy

Check = Callable[[], bool]

CHECKS: dict[str, Check] = {}


def check(name: str) -> Callable[[Check], Check]:
    """Register a check under ``name``."""

    def register(func: Check) -> Check:
        CHECKS[name] = func
        return func

    return register


@check("sbp.symmetric")
def _sbp_symmetric() -> bool:
    rng = np.random.default_rng(0)
    a = EmpiricalDistribution.uniform(rng.normal(size=(12, 2)))
    b = EmpiricalDistribution.uniform(rng.normal(1.0, 1.0, size=(9, 2)))
    config = SBPConfig(epsilon=0.5, tolerance=1e-12)
    forward = sbp_energy(a, b, config).energy
    return bool(np.isclose(forward, sbp_energy(b, a, config).energy))


@check("sbp.exact_limit")
def _sbp_exact_limit() -> bool:
    rng = np.random.default_rng(1)
    a = EmpiricalDistribution.uniform(rng.normal(size=(5, 2)))
    b = EmpiricalDistribution.uniform(rng.normal(0.5, 1.0, size=(5, 2)))
    exact = exact_assignment_energy(a, b)
    costs = np.sum((a.points[:, None] - b.points[None]) ** 2, axis=2)
    epsilon = 1e-4 * float(np.max(costs))
    approx = sbp_energy(a, b, SBPConfig(epsilon=epsilon)).energy
    return abs(approx - exact) <= 0.01 * exact


@check("sbp.gaussian_shift")
def _sbp_gaussian_shift() -> bool:
    n = 400
    quantiles = norm.ppf((np.arange(n) + 0.5) / n)[:, None]
    energy = sbp_energy(
        EmpiricalDistribution.uniform(quantiles),
        EmpiricalDistribution.uniform(quantiles + 1.0),
        SBPConfig(epsilon=0.01),
    ).energy
    oracle = gaussian_transport_oracle(
        np.zeros(1), np.eye(1), np.ones(1), np.eye(1)
    )
    return abs(energy - oracle) <= 0.1 * oracle


@check("normalize.baseline_zero_mean")
def _baseline_zero_mean() -> bool:
    rng = np.random.default_rng(2)
    features = rng.normal(3.0, 2.0, size=(40, 2))
    dataset = Dataset(
        feature_schema=FeatureSchema(feature_names=("theta", "alpha")),
        participant_ids=("p01",) * 40,
        portions=(TaskPortion.P1,) * 20 + (TaskPortion.P2,) * 20,
        features=features,
        space=SampleSpace.RAW,
    )
    normalized, _ = normalize_dataset(dataset)
    baseline = normalized.features[normalized.row_mask("p01", TaskPortion.P1)]
    return bool(np.all(np.abs(baseline.mean(axis=0)) <= 1e-9))


@check("gan.variance_loss_hand_case")
def _variance_hand_case() -> bool:
    real = np.array([[-1.0, -2.0], [1.0, 0.0], [-1.0, 0.0], [1.0, 2.0]])
    generated = np.array([[-1.0, 5.0], [1.0, 5.0], [-1.0, 5.0], [1.0, 5.0]])
    groups = [0, 0, 0, 0]
    return abs(variance_loss(real, groups, generated, groups).item() - 2.0) <= 1e-12


@check("autodiff.square_gradient")
def _square_gradient() -> bool:
    x = Tensor(np.array([[1.0, -2.0, 0.5]]), requires_grad=True)
    (g,) = grad(sum_all(square(x)), [x])
    return bool(np.allclose(g.value, 2.0 * x.value))


@check("harness.direction_agreement")
def _direction_agreement() -> bool:
    index = pd.Index(["p01", "p02", "p03", "p04"], name="participant_id")
    shared = [1.0, 1.0, 2.0, 2.0]
    real = pd.DataFrame({"P1->P2": shared, "P1->P3": [2.0, 0.5, 3.0, 1.0]}, index)
    synth = pd.DataFrame({"P1->P2": shared, "P1->P3": [2.0, 2.0, 3.0, 1.0]}, index)
    return direction_agreement(real, synth) == 0.75


@check("harness.rank_correlation")
def _rank_correlation() -> bool:
    perfect = rank_correlation([1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0])
    constant = rank_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    return perfect is not None and abs(perfect - 1.0) <= 1e-12 and constant is None


@check("adaptive.window_boundaries")
def _window_boundaries() -> bool:
    rng = np.random.default_rng(3)
    reference = EmpiricalDistribution.uniform(rng.normal(size=(20, 2)))
    state = WindowState(
        reference, WindowConfig(capacity=10, stride=5), SBPConfig(epsilon=1.0)
    )
    fresh = [k + 1 for k in range(16) if state.ingest(rng.normal(size=2)) is not None]
    return fresh == [10, 15]


@check("adaptive.thresholds")
def _thresholds() -> bool:
    cfg = ControllerConfig()
    midway = decide((cfg.theta_low + cfg.theta_high) / 2, None, cfg)
    high = decide(cfg.theta_high + 2 * cfg.hysteresis, midway, cfg)
    return (
        midway.decision is Decision.HOLD
        and high.decision is Decision.REDUCE_CHALLENGE
    )


def run_selftest(names: list[str] | None = None) -> tuple[int, int]:
    """Run the registered checks.

    Args:
        names: Subset of check names; all checks when omitted

    Returns:
        ``(passed, total)``

    Raises:
        KeyError: If an unknown check name is requested
    """
    selected = names or list(CHECKS)
    passed = 0
    for name in selected:
        func = CHECKS[name]
        try:
            ok = func()
        except Exception as e:
            logger.error(f"{name}: raised {type(e).__name__}: {e}")
            logger.debug("".join(traceback.format_exception(e)))
            ok = False
        if ok:
            passed += 1
            logger.info(f"{name}: ok")
        else:
            logger.error(f"{name}: FAILED")
    return passed, len(selected)


__all__ = ["CHECKS", "check", "run_selftest"]
