import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TOY_GRAIN = 0.05


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """64 train / 16 held-out 32x32 images over four classes."""
    from casi_inpaint.data_io import SynthConfig, synth_dataset

    man = synth_dataset(SynthConfig(16, 32, 0, grain=TOY_GRAIN), tmp_path_factory.mktemp("toy"))
    return {split: (m.load_images(), m.labels()) for split, m in man.items()}


@pytest.fixture(scope="session")
def toy_classifier(tmp_path_factory):
    """Feature classifier pretrained on a larger, disjoint draw of the same classes."""
    from casi_inpaint.data_io import SynthConfig, synth_dataset
    from casi_inpaint.trainer import pretrain_classifier

    man = synth_dataset(SynthConfig(128, 32, 1000, test_per_class=25, grain=TOY_GRAIN), tmp_path_factory.mktemp("pre"))
    return pretrain_classifier(
        man["train"].load_images(),
        man["train"].labels(),
        heldout=(man["test"].load_images(), man["test"].labels()),
    )


# --------------------------------------------------- acceptance summary lines

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__.endswith("test_acceptance") and (rep.when == "call" or rep.failed):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if not any(d == doc for d, _, _ in _ACCEPTANCE):
            _ACCEPTANCE.append((doc, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for doc, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {doc}" + (f"  [{detail}]" if detail else ""))
