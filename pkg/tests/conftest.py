"""Shared fixtures: synthetic data, the public benchmark dataset (when
available), and a terminal summary that prints one line per acceptance
criterion."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import impliedweights as iw

LALONDE_ENV = "IMPLIEDWEIGHTS_LALONDE_CSV"
LALONDE_LOCAL = Path(__file__).resolve().parent.parent / "data" / "lalonde_psid.csv"
_NBER = "https://users.nber.org/~rdehejia/data"
_NBER_FILES = (f"{_NBER}/nswre74_treated.txt", f"{_NBER}/psid_controls.txt")
_NBER_COLS = [
    "treat",
    "age",
    "education",
    "black",
    "hispanic",
    "married",
    "nodegree",
    "re74",
    "re75",
    "re78",
]


def synth_frame(n=600, seed=3, treat_share=0.3, effect=400.0) -> pd.DataFrame:
    """Benchmark-shaped synthetic data: same columns, known effect."""
    rng = np.random.default_rng(seed)
    age = rng.normal(30, 8, n).round(1)
    education = rng.integers(8, 17, n).astype(float)
    race = rng.choice(["black", "hispanic", "white"], n, p=[0.3, 0.2, 0.5])
    married = rng.integers(0, 2, n).astype(float)
    nodegree = (education < 12).astype(float)
    re74 = np.abs(rng.normal(6000, 3500, n)).round(2)
    re75 = np.abs(rng.normal(5000, 3000, n)).round(2)
    logit = (
        np.log(treat_share / (1 - treat_share))
        + 0.04 * (age - 30)
        + 0.15 * (education - 12)
        + 0.4 * (race == "black")
        - 0.00005 * (re75 - 5000)
    )
    treat = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    re78 = (
        100
        + 5 * age
        + 30 * education
        + 0.01 * re75
        + 200 * married
        + effect * treat
        + rng.normal(0, 50, n)
    )
    return pd.DataFrame(
        dict(
            treat=treat,
            age=age,
            education=education,
            married=married,
            nodegree=nodegree,
            race=race,
            re74=re74,
            re75=re75,
            re78=re78,
        )
    )


@pytest.fixture(scope="session")
def synth() -> pd.DataFrame:
    return synth_frame()


@pytest.fixture(scope="session")
def synth_ds(synth) -> iw.Dataset:
    return iw.from_dataframe(synth, treatment="treat", outcome="re78")


def _fetch_lalonde() -> pd.DataFrame | None:
    """Locate the NSW-treated + PSID-control benchmark (n = 2675).

    Search order: $IMPLIEDWEIGHTS_LALONDE_CSV, data/lalonde_psid.csv, then a
    direct download from the public archive (cached to data/). Returns None
    when unavailable (e.g. offline sandboxes).
    """
    env = os.environ.get(LALONDE_ENV)
    if env and Path(env).exists():
        return pd.read_csv(env)
    if LALONDE_LOCAL.exists():
        return pd.read_csv(LALONDE_LOCAL)
    try:
        import urllib.request

        parts = []
        for url in _NBER_FILES:
            with urllib.request.urlopen(url, timeout=20) as response:
                parts.append(
                    pd.read_csv(response, sep=r"\s+", header=None, names=_NBER_COLS)
                )
        raw = pd.concat(parts, ignore_index=True)
        race = np.where(raw["black"] == 1, "black", np.where(raw["hispanic"] == 1, "hispanic", "white"))
        frame = pd.DataFrame(
            {
                "treat": raw["treat"].astype(int),
                "age": raw["age"],
                "education": raw["education"],
                "married": raw["married"],
                "nodegree": raw["nodegree"],
                "race": race,
                "re74": raw["re74"],
                "re75": raw["re75"],
                "re78": raw["re78"],
            }
        )
        LALONDE_LOCAL.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(LALONDE_LOCAL, index=False)
        return frame
    except Exception:
        return None


@pytest.fixture(scope="session")
def lalonde_frame() -> pd.DataFrame:
    frame = _fetch_lalonde()
    if frame is None:
        pytest.skip(
            "benchmark dataset unavailable: no network access and no CSV at "
            f"${LALONDE_ENV} or {LALONDE_LOCAL}"
        )
    if len(frame) != 2675 or int((frame["treat"] == 1).sum()) != 185:
        pytest.skip("located dataset does not match the published composition (2675/185)")
    return frame


@pytest.fixture(scope="session")
def lalonde_ds(lalonde_frame) -> iw.Dataset:
    return iw.from_dataframe(lalonde_frame, treatment="treat", outcome="re78")


# --------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion test
# --------------------------------------------------------------------------

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        _acceptance_outcomes[report.nodeid] = report.outcome
    elif report.when == "setup" and report.outcome in ("skipped", "failed"):
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[nodeid]
        mark = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome)
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{mark:>5}  {name}")
