import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from srdl import data as D
from srdl.config import build_config

torch.set_num_threads(1)

_acceptance: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    number, title = marker
    entry = _acceptance.setdefault(number, (title, []))
    if report.when == "call" or report.outcome != "passed":
        entry[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report._acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcomes = _acceptance[number]
        ok = outcomes and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")


# ---------------------------------------------------------------- shared synthetic data / runs

SYNTH = dict(num_categories=8, num_images=200, image_size=64, occlusion_rate=0.3, seed=0)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    spec = D.SyntheticSpec(cooccurrence=D.linked_pairs_matrix(8, [(0, 1), (2, 3)], 0.9, 0.1), **SYNTH)
    out = tmp_path_factory.mktemp("synthetic")
    ds = D.generate_synthetic(spec)
    ds.save(out)
    return out


def desk_config(data_dir, **over):
    cfg = {"data": {"train_manifest": str(data_dir / "manifest.tsv"),
                    "vocabulary": str(data_dir / "vocabulary.txt"),
                    "word_vectors": str(data_dir / "word_vectors.txt")}}
    for key, val in over.items():
        if isinstance(val, dict):
            cfg.setdefault(key, {}).update(val)
        else:
            cfg[key] = val
    return build_config(cfg, env={})


@pytest.fixture(scope="session")
def overfit_runs(synthetic_dir, tmp_path_factory):
    """Full desk-profile runs with OE on and off (shared by several tests)."""
    import time
    from srdl import harness as H

    runs = {}
    for oe in (True, False):
        cfg = desk_config(synthetic_dir, oe={"enabled": oe})
        out = tmp_path_factory.mktemp(f"run_oe{int(oe)}")
        t0 = time.perf_counter()
        result = H.train(cfg, out)
        runs[oe] = dict(cfg=cfg, out=out, result=result, seconds=time.perf_counter() - t0)
    return runs


@pytest.fixture
def rng():
    return np.random.default_rng(0)
