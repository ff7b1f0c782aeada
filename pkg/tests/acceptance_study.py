"""The desk-scale simulation study behind the coverage and Delta acceptance checks.

Replicates are cached one JSON file each under ``OBSPOP_STUDY_CACHE``
(default ``tests/.study_cache``), keyed by the config hash, so an
interrupted run resumes and later test runs reuse finished fits.

Run directly to fill the cache ahead of the test suite::

    python tests/acceptance_study.py
"""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

from obspop.study import StudyConfig, dumps, run_replicate, summarize

CONFIG = StudyConfig(seed=2017, scenarios=(1, 2, 3), N=2000, R=50)


def cache_dir(cfg: StudyConfig = CONFIG) -> Path:
    root = Path(os.environ.get("OBSPOP_STUDY_CACHE", Path(__file__).parent / ".study_cache"))
    return root / cfg.hash()[:16]


def load_or_run(cfg: StudyConfig = CONFIG, log=None):
    """Return ``(summary, records)``, computing only replicates missing from the cache."""
    d = cache_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(dumps(cfg.to_dict()))
    records = []
    for s in cfg.scenarios:
        for r in range(cfg.R):
            path = d / f"rec_s{s}_r{r}.json"
            if path.exists():
                rec = json.loads(path.read_text())
            else:
                t0 = time.perf_counter()
                rec = run_replicate(cfg, s, r, keep=False)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(dumps(rec))
                tmp.replace(path)
                if log:
                    log(f"scenario {s} replicate {r}: m={rec['m']} {time.perf_counter() - t0:.0f}s")
            records.append(rec)
    return summarize(records, cfg), records


if __name__ == "__main__":
    summary, _ = load_or_run(log=lambda msg: print(msg, flush=True))
    sys.stdout.write(summary.to_csv())
