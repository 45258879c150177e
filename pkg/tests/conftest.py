import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mtdgp.architecture import RECIPES, InitRecipe, KernelInit, ModelSpec, build_model  # noqa: E402
from mtdgp.data import TaskDataset, fit_standardizer, generate_toy  # noqa: E402
from mtdgp.objective import MonteCarloConfig, elbo  # noqa: E402
from mtdgp.rng import RngStream  # noqa: E402
from mtdgp.training import TrainConfig, train  # noqa: E402

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker
        _CRITERIA[number] = (title, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome = _CRITERIA[number]
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {number}: {word}  {title}")


# ------------------------------------------------------------------ fixtures

SMOOTH = InitRecipe(
    KernelInit(1.0, 1.0), KernelInit(1.0, 0.5), KernelInit(1.0, 1.0), likelihood_variance=0.1, inner_noise=0.05
)


def random_tasks(n_per_task, tasks=2, input_dim=1, output_dim=1, seed=0):
    rng = np.random.default_rng(seed)
    return [
        TaskDataset(rng.uniform(-1, 1, (n_per_task, input_dim)), rng.standard_normal((n_per_task, output_dim)), t)
        for t in range(tasks)
    ]


def jitter_parameters(model, scale, seed):
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        if p.trainable:
            p.unconstrained = p.unconstrained + scale * rng.standard_normal(p.shape)
    return model


SPEC_KWARGS = {
    "mMDGP": dict(shared_units=[2], task_units=[1]),
    "sMDGP": dict(shared_units=[2]),
    "cMDGP": dict(shared_units=[2]),
    "iDGP": dict(task_units=[1]),
    "iGP": {},
    "cGP": {},
}


def tiny_model(variant="mMDGP", m=3, seed=1, data=None, recipe=SMOOTH, likelihood="gaussian", tasks=2):
    data = data if data is not None else random_tasks(4, tasks=tasks, seed=seed)
    spec = ModelSpec(variant, tasks, data[0].inputs.shape[1], inducing_count=m, likelihood=likelihood,
                     **SPEC_KWARGS[variant])
    return build_model(spec, recipe, RngStream(seed), data), data


@pytest.fixture(scope="session")
def toy_run():
    """mMDGP trained for 2000 iterations on the standardised toy data (shared by several tests)."""
    raw = generate_toy(100, 0.05, seed=0)
    st = fit_standardizer(raw)
    data = st.apply(raw)
    spec = ModelSpec("mMDGP", 2, 1, shared_units=[1], task_units=[1], inducing_count=20)
    model = build_model(spec, RECIPES["toy"], RngStream(0), data)
    mc = MonteCarloConfig(5, 50)
    initial = float(elbo(model, data, None, mc, RngStream(123)).value)
    model, trace = train(model, data, TrainConfig(2000, 0.01, seed=0, trace_every=1), mc=mc)
    final = float(elbo(model, data, None, mc, RngStream(123)).value)
    return {"model": model, "trace": trace, "raw": raw, "data": data, "standardizer": st, "mc": mc,
            "initial_elbo": initial, "final_elbo": final}
