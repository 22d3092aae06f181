import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helmkeeper.cli import build_model, cmd_collect, load_datasets
from helmkeeper.config import ProjectConfig
from helmkeeper.sysid import TrainConfig, generate_maneuvers, train
from helmkeeper.vessel import VesselParams, Wind

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def plant():
    return VesselParams()


@pytest.fixture(scope="session")
def euler_data(plant):
    """Short noiseless dataset from the Euler-integrated plant (the SD model's own discretization)."""
    d = generate_maneuvers(plant, [Wind(4.0, 0.3)], seed=3, method="euler")
    return d.subset(np.arange(1500))


@pytest.fixture(scope="session")
def wind6_data(plant):
    return generate_maneuvers(plant, [Wind(6.0, 0.7)], seed=0)


@pytest.fixture(scope="session")
def desk_models(tmp_path_factory):
    """The models `helmkeeper collect` + `helmkeeper train` produce with the default config."""
    cfg = ProjectConfig()
    out = tmp_path_factory.mktemp("desk")
    cmd_collect(cfg, out, seed=0)
    data = load_datasets(out / "manifest.json")
    models, reports = {}, {}
    for kind in ("nnsem", "hybrid"):
        models[kind], reports[kind] = train(build_model(kind, cfg, 0), data, TrainConfig(seed=0))
    models["sd"] = build_model("sd", cfg, 0)
    return models, reports, data


# ---------------------------------------------------------------- acceptance summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    prev = _CRITERIA.get(n)
    passed = rep.passed and (prev is None or prev[0])
    _CRITERIA[n] = (passed, title, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, title, detail = _CRITERIA[n]
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
