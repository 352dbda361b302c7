import csv
import io
import json

import numpy as np
import pytest

from blockweak.experiments import (PHASE_CSV_HEADER, CrossingError, ExperimentConfig, PhaseCell,
                                   estimate_crossing, isotonic_rates, metadata_to_json,
                                   phase_metadata, phase_to_csv, run_phase)


def _cells(rates, n=100, trials=10):
    return [PhaseCell(d=1, n=n, m=m, k=20, trials=trials, successes=int(r * trials))
            for m, r in zip(range(30, 30 + 10 * len(rates), 10), rates)]


def test_crossing_interpolates():
    cells = _cells([0.0, 0.2, 0.8, 1.0])
    assert estimate_crossing(cells) == pytest.approx(0.45)


def test_crossing_exact_level_takes_lower_alpha():
    cells = _cells([0.0, 0.5, 0.5, 1.0])
    assert estimate_crossing(cells) == pytest.approx(0.4)


def test_crossing_missing():
    with pytest.raises(CrossingError, match="widen"):
        estimate_crossing(_cells([0.6, 0.7, 0.9]))
    with pytest.raises(CrossingError):
        estimate_crossing(_cells([0.0, 0.1]))


def test_isotonic_is_monotone():
    cells = _cells([0.0, 0.3, 0.2, 0.9, 0.8, 1.0])
    fit = isotonic_rates(cells)
    assert np.all(np.diff(fit) >= 0)


@pytest.mark.parametrize("kw", [
    dict(alpha_grid=()),
    dict(alpha_grid=(0.5, 0.4)),
    dict(alpha_grid=(0.1, 0.5)),
    dict(beta=1.0),
    dict(trials=0),
])
def test_config_rejects(kw):
    base = dict(d=1, n=20, beta=0.2, alpha_grid=(0.4, 0.6), trials=2, master_seed=1)
    base.update(kw)
    with pytest.raises(ValueError):
        ExperimentConfig(**base)


def test_small_campaign_shape_and_determinism():
    cfg = ExperimentConfig(d=2, n=20, beta=0.2, alpha_grid=(0.3, 0.6, 0.9), trials=4,
                           master_seed=11)
    a = run_phase(cfg)
    b = run_phase(cfg, jobs=3)
    assert phase_to_csv(a) == phase_to_csv(b)
    rows = list(csv.reader(io.StringIO(phase_to_csv(a))))
    assert tuple(rows[0]) == PHASE_CSV_HEADER
    assert [int(r[2]) for r in rows[1:]] == cfg.m_values()
    assert all(c.k == 4 and c.trials == 4 for c in a)
    assert a[-1].rate == 1.0


def test_metadata_records_provenance():
    cfg = ExperimentConfig(d=1, n=10, beta=0.2, alpha_grid=(0.5, 1.0), trials=2, master_seed=3)
    cells = run_phase(cfg)
    meta = json.loads(metadata_to_json(phase_metadata(cfg, cells)))
    for key in ("config", "master_seed", "code_version", "rng_algorithm", "nonconvergence_rate"):
        assert key in meta
    assert meta["config"]["rec_tol"] == 1e-4
    assert meta["quality_gate"] == "pass"


def test_success_rate_rises_with_alpha():
    cfg = ExperimentConfig(d=2, n=40, beta=0.2, alpha_grid=tuple(np.linspace(0.25, 0.85, 7)),
                           trials=12, master_seed=2)
    fit = isotonic_rates(run_phase(cfg))
    assert fit[0] <= 0.2 and fit[-1] == 1.0
