"""Seeded Monte Carlo phase-transition campaigns.

A campaign fixes ``(d, n, beta)`` and sweeps the measurement fraction over an
ascending grid.  Trial ``t`` of grid cell ``c`` draws its instance from
``RngSpec(master_seed, derive_stream_id(c, t))``, so results do not depend on
how trials are scheduled across worker processes.
"""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.isotonic import IsotonicRegression

from . import __version__
from .core import RNG_ALGORITHM, BlockStructure, RngSpec, derive_stream_id, generate_instance
from .recovery import (DEFAULT_FEAS_TOL, DEFAULT_MAX_ITERS, DEFAULT_OBJ_TOL, DEFAULT_REC_TOL,
                       check_recovery, solve_group_bp)

__all__ = [
    "PhaseCell",
    "ExperimentConfig",
    "run_phase",
    "phase_to_csv",
    "phase_metadata",
    "estimate_crossing",
    "isotonic_rates",
    "CrossingError",
]

log = logging.getLogger(__name__)

PHASE_CSV_HEADER = ("d", "n", "m", "k", "alpha", "beta", "trials", "successes", "rate",
                    "nonconverged")
NONCONVERGENCE_GATE = 0.01


class CrossingError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseCell:
    d: int
    n: int
    m: int
    k: int
    trials: int
    successes: int
    nonconverged: int = 0

    @property
    def alpha(self):
        return self.m / self.n

    @property
    def beta(self):
        return self.k / self.n

    @property
    def rate(self):
        return self.successes / self.trials


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    n: int
    beta: float
    alpha_grid: tuple
    trials: int
    master_seed: int
    feas_tol: float = DEFAULT_FEAS_TOL
    obj_tol: float = DEFAULT_OBJ_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    rec_tol: float = DEFAULT_REC_TOL
    magnitude_low: float = 1.0
    magnitude_high: float = 2.0

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", grid)
        if not grid:
            raise ValueError("alpha grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("alpha grid must be strictly ascending")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if grid[0] <= self.beta or grid[-1] > 1.0:
            raise ValueError("alpha grid must lie in (beta, 1]")
        if self.trials < 1 or self.n < 1 or self.d < 1:
            raise ValueError("n, d and trials must be positive")

    @property
    def k(self):
        return int(round(self.beta * self.n))

    def m_values(self):
        return [min(self.n, max(1, int(round(a * self.n)))) for a in self.alpha_grid]


def _run_trial(args):
    cfg, cell_index, m, trial = args
    structure = BlockStructure(n=cfg.n, d=cfg.d, m=m, k=cfg.k)
    rng = RngSpec(cfg.master_seed, derive_stream_id(cell_index, trial))
    inst = generate_instance(structure, cfg.magnitude_low, cfg.magnitude_high, rng)
    res = solve_group_bp(inst.A, inst.y, cfg.d, feas_tol=cfg.feas_tol, obj_tol=cfg.obj_tol,
                         max_iters=cfg.max_iters)
    ok = res.converged and check_recovery(res, inst.x_true, cfg.rec_tol)
    return bool(ok), not res.converged


def run_phase(config, jobs=1):
    """Run every trial of every grid cell; cells come back in grid order.

    Non-converged solves count as failures and are tallied separately.
    """
    tasks = [(config, c, m, t) for c, m in enumerate(config.m_values())
             for t in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        outcomes = [_run_trial(t) for t in tasks]

    cells = []
    for c, m in enumerate(config.m_values()):
        chunk = outcomes[c * config.trials:(c + 1) * config.trials]
        cells.append(PhaseCell(d=config.d, n=config.n, m=m, k=config.k, trials=config.trials,
                               successes=sum(ok for ok, _ in chunk),
                               nonconverged=sum(nc for _, nc in chunk)))
    nc = sum(c.nonconverged for c in cells)
    if nc:
        log.warning("%d of %d solves did not converge", nc, len(tasks))
    return cells


def phase_to_csv(cells):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PHASE_CSV_HEADER)
    for c in cells:
        w.writerow([c.d, c.n, c.m, c.k, repr(c.alpha), repr(c.beta), c.trials, c.successes,
                    repr(c.rate), c.nonconverged])
    return buf.getvalue()


def nonconvergence_rate(cells):
    total = sum(c.trials for c in cells)
    return sum(c.nonconverged for c in cells) / total if total else 0.0


def phase_metadata(config, cells):
    """Sidecar document describing how a phase CSV was produced."""
    cfg = asdict(config)
    cfg["alpha_grid"] = list(config.alpha_grid)
    cfg["k"] = config.k
    rate = nonconvergence_rate(cells)
    return {
        "config": cfg,
        "master_seed": config.master_seed,
        "code_version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "numpy_version": np.__version__,
        "stream_derivation": "RngSpec(master_seed, splitmix64^2 fold of (cell, trial))",
        "nonconvergence_rate": rate,
        "quality_gate": "pass" if rate <= NONCONVERGENCE_GATE else "fail",
    }


def metadata_to_json(meta):
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def isotonic_rates(cells):
    """Success rates smoothed to be nondecreasing in alpha."""
    alphas = np.array([c.alpha for c in cells])
    rates = np.array([c.rate for c in cells])
    weights = np.array([c.trials for c in cells], dtype=float)
    return IsotonicRegression(increasing=True).fit_transform(alphas, rates, sample_weight=weights)


def estimate_crossing(cells, level=0.5):
    """Alpha at which the success rate first reaches ``level``, by linear interpolation.

    Scans grid order and uses the first adjacent pair bracketing ``level``;
    a cell whose rate equals ``level`` exactly resolves to its own alpha, so
    ties go to the lower alpha.
    """
    pts = [(c.alpha, c.rate) for c in cells]
    if len(pts) < 2:
        raise CrossingError("need at least two cells to locate a crossing")
    lo_a, hi_a = pts[0][0], pts[-1][0]
    if min(r for _, r in pts) > level or max(r for _, r in pts) < level:
        pts = []
    for (a0, r0), (a1, r1) in zip(pts, pts[1:]):
        if r0 == level:
            return a0
        if r0 < level <= r1:
            return a1 if r1 == level else a0 + (level - r0) * (a1 - a0) / (r1 - r0)
    raise CrossingError(
        f"success rate never crosses {level} on alpha in [{lo_a:.3g}, {hi_a:.3g}];"
        " widen the alpha grid")
