"""Schrödinger-bridge transport energies between empirical feature distributions.

The static bridge with Brownian reference dynamics reduces to entropic optimal
transport with squared Euclidean ground cost. This module solves it with
log-domain Sinkhorn iterations and epsilon scaling, reports the transport term
``<plan, C>`` as the energy, and offers closed-form and exact-assignment
oracles used to validate the solver.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .dataset import EmptyGroupError, MissingColumnError, group
from .exceptions import ComputationFailure, DimensionMismatchError, ValidationFailure
from .models import (
    Dataset,
    EmpiricalDistribution,
    FloatArray,
    SampleSpace,
    SBPConfig,
    SBPResult,
    TaskPortion,
    Transition,
    TransportPlan,
    transition_label,
)

# Stages before the last stop at this marginal error; only the final stage
# has to reach the configured tolerance.
_COARSE_STAGE_TOLERANCE = 1e-3

# Iterations between two estimates of the error contraction rate.
_RATE_WINDOW = 20


class NotConvergedError(ComputationFailure):
    """Sinkhorn hit its iteration cap above the marginal tolerance.

    Attributes:
        result: Best iterate with honest diagnostics
    """

    def __init__(self, message: str, result: SBPResult):
        """Keep the best iterate on the exception."""
        super().__init__(message)
        self.result = result


class NumericalOverflowError(ComputationFailure):
    """Dual potentials became non-finite despite log-domain updates."""


class NotPSDError(ValidationFailure):
    """A covariance matrix is not symmetric positive semi-definite."""


class InvalidMarginalError(ValidationFailure):
    """A marginal is not a strictly positive probability vector."""


def cost_matrix(
    source: EmpiricalDistribution, target: EmpiricalDistribution
) -> FloatArray:
    """Squared Euclidean costs ``C[i, j] = ||p_i - q_j||^2``.

    Costs are accumulated coordinate by coordinate from exact differences, so
    ``C(P, Q)`` equals ``C(Q, P).T`` bit for bit and coincident points cost 0.

    Raises:
        DimensionMismatchError: If the two supports differ in dimension
    """
    if source.dimension != target.dimension:
        raise DimensionMismatchError(
            f"Cannot compare d={source.dimension} with d={target.dimension}"
        )
    cost = np.zeros((source.size, target.size), dtype=np.float64)
    for k in range(source.dimension):
        diff = source.points[:, k, None] - target.points[None, :, k]
        cost += diff * diff
    return cost


def default_epsilon(cost: FloatArray, scale: float = 0.05) -> float:
    """``scale * median(C)``, falling back to the mean or 1.0 for zero costs."""
    for reference in (float(np.median(cost)), float(np.mean(cost))):
        if reference > 0.0:
            return scale * reference
    return 1.0


class _Relaxation:
    """Over-relaxation factor tuned from the observed error decay.

    Every ``window`` iterations the contraction rate of plain Sinkhorn is
    recovered from the measured rate at the current factor and the factor is
    moved to ``2 / (1 + sqrt(1 - rate))``. A window without progress resets
    the factor to 1.
    """

    def __init__(self, max_factor: float, window: int = _RATE_WINDOW):
        self.max_factor = max_factor
        self.window = window
        self.factor = 1.0
        self._errors: list[float] = []

    def update(self, error: float) -> float:
        """Record a marginal error and return the factor for the next sweep."""
        self._errors.append(error)
        if self.max_factor <= 1.0 or len(self._errors) <= self.window:
            return self.factor
        start, end = self._errors[0], self._errors[-1]
        self._errors = [end]
        if start <= 0.0 or end <= 0.0:
            return self.factor
        observed = (end / start) ** (1.0 / self.window)
        if observed >= 1.0:
            self.factor = 1.0
            return self.factor
        w = self.factor
        plain_rate = min((observed + w - 1.0) ** 2 / (w * w * observed), 1.0)
        optimal = 2.0 / (1.0 + np.sqrt(1.0 - plain_rate))
        self.factor = float(np.clip(optimal, 1.0, self.max_factor))
        return self.factor


class SinkhornSolver:
    """Log-domain Sinkhorn solver with epsilon scaling and warm starts.

    The regularization is annealed over ``epsilon_scaling_steps`` stages, each
    halving epsilon and reusing the previous stage's potentials; intermediate
    stages stop at a coarse marginal error. All stages share the
    ``max_iterations`` budget. Within a stage the potential updates are
    over-relaxed by a factor in ``[1, max_relaxation]`` adapted to the
    observed convergence rate.
    """

    def __init__(self, config: SBPConfig | None = None):
        """Initialize the solver.

        Args:
            config: Solver settings (defaults when omitted)
        """
        self.config = config or SBPConfig()

    def resolve_epsilon(self, cost: FloatArray) -> float:
        """Final regularization for a cost matrix."""
        if self.config.epsilon is not None:
            return self.config.epsilon
        return default_epsilon(cost, self.config.epsilon_scale)

    def solve(
        self,
        a: FloatArray,
        b: FloatArray,
        cost: FloatArray,
        warm_start: tuple[FloatArray, FloatArray] | None = None,
    ) -> SBPResult:
        """Solve one entropic transport problem.

        Args:
            a: Strictly positive source weights summing to 1
            b: Strictly positive target weights summing to 1
            cost: ``n x m`` finite cost matrix
            warm_start: Potentials ``(f, g)`` of a previous solve; when given,
                epsilon scaling is skipped

        Returns:
            Coupling, energy and diagnostics of the final iterate

        Raises:
            InvalidMarginalError: If a marginal has non-positive entries
            DimensionMismatchError: If shapes disagree
            NumericalOverflowError: If the potentials become non-finite
            NotConvergedError: If ``strict`` and the tolerance was not reached
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        cost = np.asarray(cost, dtype=np.float64)
        n_rows, n_cols = cost.shape
        if a.shape != (n_rows,) or b.shape != (n_cols,):
            raise DimensionMismatchError(
                f"Marginals {a.shape}/{b.shape} do not match cost matrix {cost.shape}"
            )
        if np.any(a <= 0) or np.any(b <= 0):
            raise InvalidMarginalError(
                "Marginals must be strictly positive; prune zeros first"
            )
        if not np.all(np.isfinite(cost)):
            raise InvalidMarginalError("Cost matrix must be finite")

        epsilon = self.resolve_epsilon(cost)
        log_a = np.log(a)
        log_b = np.log(b)

        if warm_start is not None and (
            warm_start[0].shape == (n_rows,) and warm_start[1].shape == (n_cols,)
        ):
            f = np.array(warm_start[0], dtype=np.float64)
            g = np.array(warm_start[1], dtype=np.float64)
            schedule = [epsilon]
        else:
            if warm_start is not None:
                logger.debug("Warm-start potentials have the wrong size; starting cold")
            f = np.zeros(n_rows)
            g = np.zeros(n_cols)
            steps = self.config.epsilon_scaling_steps
            schedule = [epsilon * 2.0 ** (steps - 1 - k) for k in range(steps)]

        iterations = 0
        budget = self.config.max_iterations
        for stage, stage_epsilon in enumerate(schedule):
            final_stage = stage == len(schedule) - 1
            tolerance = (
                self.config.tolerance
                if final_stage
                else max(self.config.tolerance, _COARSE_STAGE_TOLERANCE)
            )
            f, g, used = self._iterate(
                log_a,
                log_b,
                cost,
                (f, g),
                stage_epsilon,
                tolerance,
                budget - iterations,
            )
            iterations += used
            if iterations >= budget:
                break

        plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
        transport = TransportPlan(coupling=plan, source_marginal=a, target_marginal=b)
        marginal_error = transport.marginal_error()
        converged = marginal_error <= self.config.tolerance
        result = SBPResult(
            energy=max(float(np.sum(plan * cost)), 0.0),
            plan=transport,
            iterations_used=iterations,
            converged=converged,
            marginal_error=marginal_error,
            epsilon=epsilon,
            source_potential=f,
            target_potential=g,
        )

        if not converged:
            message = (
                f"Sinkhorn stopped after {iterations} iterations with marginal "
                f"error {marginal_error:.3e} > {self.config.tolerance:.1e} "
                f"(epsilon={epsilon:.3e})"
            )
            if self.config.strict:
                raise NotConvergedError(message, result)
            logger.warning(message)
        else:
            logger.debug(
                f"Sinkhorn converged in {iterations} iterations "
                f"(epsilon={epsilon:.3e}, error={marginal_error:.1e})"
            )
        return result

    def _iterate(
        self,
        log_a: FloatArray,
        log_b: FloatArray,
        cost: FloatArray,
        potentials: tuple[FloatArray, FloatArray],
        epsilon: float,
        tolerance: float,
        budget: int,
    ) -> tuple[FloatArray, FloatArray, int]:
        """Alternate potential updates at one epsilon until both marginals match.

        The stopping test uses ``max(row error, column error)`` of the current
        pair of potentials, the same measure as ``TransportPlan.marginal_error``.
        """
        f, g = potentials
        a = np.exp(log_a)
        b = np.exp(log_b)
        relaxation = _Relaxation(self.config.max_relaxation)
        omega = 1.0
        col_error = np.inf
        used = 0
        while used < budget:
            row_lse = logsumexp((g[None, :] - cost) / epsilon, axis=1)
            if used > 0:
                row_error = float(np.abs(np.exp(f / epsilon + row_lse) - a).sum())
                error = max(row_error, col_error)
                if error <= tolerance:
                    break
                omega = relaxation.update(error)
            f = f + omega * (epsilon * (log_a - row_lse) - f)
            col_lse = logsumexp((f[:, None] - cost) / epsilon, axis=0)
            g = g + omega * (epsilon * (log_b - col_lse) - g)
            col_error = float(np.abs(np.exp(g / epsilon + col_lse) - b).sum())
            used += 1
            if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
                raise NumericalOverflowError(
                    f"Non-finite dual potentials at epsilon={epsilon:.3e}"
                )
        return f, g, used


def sinkhorn(
    a: FloatArray, b: FloatArray, cost: FloatArray, config: SBPConfig | None = None
) -> TransportPlan:
    """Entropic coupling of two marginals under a cost matrix."""
    return SinkhornSolver(config).solve(a, b, cost).plan


def sbp_energy(
    source: EmpiricalDistribution,
    target: EmpiricalDistribution,
    config: SBPConfig | None = None,
    warm_start: tuple[FloatArray, FloatArray] | None = None,
) -> SBPResult:
    """Transport energy ``<plan, C>`` of the static bridge between two clouds.

    Zero-weight points are pruned before solving. The entropy term is not
    included in the energy. The problem is solved in both directions and the
    reported plan is the average of the two couplings, so swapping ``source``
    and ``target`` transposes the plan and keeps the energy. Potentials are
    those of the ``source -> target`` solve and iterations are summed.

    Args:
        source: Distribution at the start of the transition
        target: Distribution at the end of the transition
        config: Solver settings
        warm_start: Potentials from a previous solve of the same shape

    Raises:
        DimensionMismatchError: If the clouds differ in dimension
        NotConvergedError: If ``config.strict`` and the solve did not converge
    """
    source = source.pruned()
    target = target.pruned()
    cost = cost_matrix(source, target)
    solver = SinkhornSolver(config)
    reverse_start = None if warm_start is None else (warm_start[1], warm_start[0])
    forward = solver.solve(source.weights, target.weights, cost, warm_start)
    reverse = solver.solve(
        target.weights, source.weights, cost_matrix(target, source), reverse_start
    )
    coupling = 0.5 * (forward.plan.coupling + reverse.plan.coupling.T)
    plan = TransportPlan(
        coupling=coupling,
        source_marginal=source.weights,
        target_marginal=target.weights,
    )
    marginal_error = plan.marginal_error()
    return forward.model_copy(
        update={
            "energy": max(float(np.sum(coupling * cost)), 0.0),
            "plan": plan,
            "iterations_used": forward.iterations_used + reverse.iterations_used,
            "converged": forward.converged
            and reverse.converged
            and marginal_error <= solver.config.tolerance,
            "marginal_error": marginal_error,
        }
    )


def _psd_sqrt(matrix: FloatArray) -> FloatArray:
    values, vectors = eigh(matrix)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def _check_psd(cov: FloatArray, name: str) -> FloatArray:
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape[0] != cov.shape[1]:
        raise NotPSDError(f"{name} must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * scale):
        raise NotPSDError(f"{name} is not symmetric")
    smallest = float(np.min(eigh(cov, eigvals_only=True)))
    if smallest < -1e-10 * scale:
        raise NotPSDError(f"{name} has negative eigenvalue {smallest:.3e}")
    return (cov + cov.T) / 2.0


def gaussian_transport_oracle(
    mu0: FloatArray | Sequence[float],
    cov0: FloatArray | Sequence[Sequence[float]] | float,
    mu1: FloatArray | Sequence[float],
    cov1: FloatArray | Sequence[Sequence[float]] | float,
) -> float:
    """Exact squared 2-Wasserstein cost between two Gaussians.

    ``||mu0 - mu1||^2 + tr(S0 + S1 - 2 (S0^1/2 S1 S0^1/2)^1/2)``

    Raises:
        NotPSDError: If a covariance is not symmetric PSD
        DimensionMismatchError: If the shapes do not agree
    """
    m0 = np.atleast_1d(np.asarray(mu0, dtype=np.float64))
    m1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    s0 = _check_psd(np.asarray(cov0), "cov0")
    s1 = _check_psd(np.asarray(cov1), "cov1")
    if not (m0.shape == m1.shape and s0.shape == s1.shape == (m0.size, m0.size)):
        raise DimensionMismatchError("Means and covariances must share one dimension")

    root0 = _psd_sqrt(s0)
    cross = _psd_sqrt(root0 @ s1 @ root0)
    shift = float(np.sum((m0 - m1) ** 2))
    spread = float(np.trace(s0) + np.trace(s1) - 2.0 * np.trace(cross))
    return max(shift + spread, 0.0)


def exact_assignment_energy(
    source: EmpiricalDistribution, target: EmpiricalDistribution
) -> float:
    """Unregularized transport cost between two equal-size uniform clouds.

    With uniform weights on both sides the optimal coupling is a permutation,
    so the cost is the optimal assignment value divided by n.

    Raises:
        DimensionMismatchError: If sizes or dimensions differ
        InvalidMarginalError: If a weight vector is not uniform
    """
    if source.size != target.size:
        raise DimensionMismatchError("Exact assignment needs equal-size clouds")
    for cloud in (source, target):
        if not np.allclose(cloud.weights, 1.0 / cloud.size, rtol=0.0, atol=1e-12):
            raise InvalidMarginalError("Exact assignment needs uniform weights")
    cost = cost_matrix(source, target)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / source.size)


def group_distribution(
    dataset: Dataset, participant: str, portion: TaskPortion
) -> EmpiricalDistribution:
    """Uniform empirical distribution of one (participant, portion) group."""
    return EmpiricalDistribution.uniform(group(dataset, participant, portion))


def energy_table(
    dataset: Dataset,
    transitions: Sequence[Transition],
    config: SBPConfig | None = None,
    threads: int = 1,
    diagnostics: list[dict[str, Any]] | None = None,
) -> pd.DataFrame:
    """Per-participant transport energies for each transition.

    Solves run on up to ``threads`` workers; every result lands in a fixed
    slot so the table does not depend on the schedule.

    Args:
        dataset: Normalized dataset
        transitions: ``(source, target)`` portion pairs
        config: Solver settings
        threads: Worker count
        diagnostics: When given, receives one diagnostics record per solve in
            participant-then-transition order

    Returns:
        Frame indexed by ``participant_id`` with one ``P1->P2`` style column
        per transition

    Raises:
        EmptyGroupError: If a participant lacks a referenced portion
    """
    config = config or SBPConfig()
    if dataset.space != SampleSpace.NORMALIZED:
        logger.debug("energy_table called on a raw-space dataset")
    participants = dataset.participants()
    labels = [transition_label(t) for t in transitions]

    jobs: list[tuple[str, Transition]] = []
    for participant in participants:
        for transition in transitions:
            for portion in transition:
                if not dataset.row_mask(participant, portion).any():
                    raise EmptyGroupError(
                        f"Participant '{participant}' has no {portion.value} samples"
                    )
            jobs.append((participant, transition))

    logger.info(
        f"Computing {len(jobs)} transport energies "
        f"({len(participants)} participants x {len(labels)} transitions, "
        f"threads={threads})"
    )

    def solve(job: tuple[str, Transition]) -> SBPResult:
        participant, (source, target) = job
        return sbp_energy(
            group_distribution(dataset, participant, source),
            group_distribution(dataset, participant, target),
            config,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, jobs))
    else:
        results = [solve(job) for job in jobs]

    values = np.array([r.energy for r in results], dtype=np.float64).reshape(
        len(participants), len(labels)
    )
    if diagnostics is not None:
        for (participant, transition), result in zip(jobs, results, strict=True):
            diagnostics.append(
                {
                    "participant_id": participant,
                    "transition": transition_label(transition),
                    **result.diagnostics(),
                }
            )
    frame = pd.DataFrame(values, index=pd.Index(participants, name="participant_id"))
    frame.columns = labels
    return frame


def write_energy_table(table: pd.DataFrame, path: Path | str) -> None:
    """Write an energy table as ``participant_id,P1->P2,...`` CSV in full precision."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(["participant_id", *map(str, table.columns)])]
    for participant, row in table.iterrows():
        lines.append(",".join([str(participant), *(repr(float(v)) for v in row)]))
    file_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_energy_table(path: Path | str) -> pd.DataFrame:
    """Read a table written by :func:`write_energy_table`.

    Raises:
        MissingColumnError: If the ``participant_id`` column is absent
    """
    frame = pd.read_csv(
        Path(path),
        dtype={"participant_id": str},
        float_precision="round_trip",
        comment="#",
    )
    if "participant_id" not in frame.columns:
        raise MissingColumnError(f"{path} has no participant_id column")
    return frame.set_index("participant_id").astype(np.float64)


__all__ = [
    "NotConvergedError",
    "NumericalOverflowError",
    "NotPSDError",
    "InvalidMarginalError",
    "cost_matrix",
    "default_epsilon",
    "SinkhornSolver",
    "sinkhorn",
    "sbp_energy",
    "gaussian_transport_oracle",
    "exact_assignment_energy",
    "group_distribution",
    "energy_table",
    "write_energy_table",
    "read_energy_table",
]
