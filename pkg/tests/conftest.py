import numpy as np
import pytest

from icebreaker.dataset import SynthConfig, generate_synthetic

ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        ACCEPTANCE_RESULTS[label] = "PASS" if rep.outcome == "passed" else "FAIL"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test checks")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{ACCEPTANCE_RESULTS[label]}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(20181022)


@pytest.fixture(scope="session")
def zero_noise_small():
    """60 videos, 4 clusters, no noise; small dims so training is quick."""
    cfg = SynthConfig(n_videos=60, n_clusters=4, video_dim=16, frame_dim=32, max_frames=8,
                      relevant_per_query=5, cluster_noise_sigma=0.0, seed=7)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    from icebreaker.dataset import save_dataset

    cfg = SynthConfig(n_videos=24, n_clusters=3, video_dim=8, frame_dim=12, max_frames=5,
                      relevant_per_query=3, cluster_noise_sigma=0.2, seed=3)
    root = tmp_path_factory.mktemp("tiny")
    save_dataset(root, *generate_synthetic(cfg))
    return root
