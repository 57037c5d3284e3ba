"""Stochastic collocation: one ensemble run over the sparse-grid points."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .schemes import EnsembleProblem, SchemeConfig, run
from .stochastic import SparseGridRule, expectation


@dataclass
class QoiSeries:
    """Per-step expected energy and the per-realization values behind it."""

    times: np.ndarray
    expected_energy: np.ndarray
    energies: np.ndarray  # (n_steps, J)
    weights: np.ndarray
    blowup_time: float | None = None
    log_rows: list = field(default_factory=list)
    result: object = None

    @property
    def blew_up(self) -> bool:
        return self.blowup_time is not None

    def write_csv(self, path) -> None:
        J = self.energies.shape[1] if self.energies.size else len(self.weights)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "expected_energy"] + [f"energy_{j + 1}" for j in range(J)])
            for t, e, row in zip(self.times, self.expected_energy, self.energies):
                w.writerow([f"{t:.12g}", f"{e:.12g}"] + [f"{v:.12g}" for v in row])


def scm_run(scheme: str, cfg: SchemeConfig, problem: EnsembleProblem, rule: SparseGridRule,
            **run_kw) -> QoiSeries:
    """Advance the realizations tied to ``rule``'s points and aggregate energies.

    ``problem`` must carry one realization per collocation point, in the
    rule's order.
    """
    if problem.J != rule.n_points:
        raise ValueError(f"problem has {problem.J} realizations, rule has {rule.n_points} points")
    res = run(scheme, cfg, problem, keep_means=False, **run_kw)
    energies = np.array(res.energies).reshape(len(res.energies), problem.J)
    expected = np.array([expectation(rule, e) for e in energies])
    return QoiSeries(
        times=np.array(res.times),
        expected_energy=expected,
        energies=energies,
        weights=rule.weights,
        blowup_time=res.blowup_time,
        log_rows=res.log_rows,
        result=res,
    )
