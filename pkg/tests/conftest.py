import numpy as np
import pytest

from tritrain.data import synth_domain_shift


def rotated_task(seed, n_source=200, n_unlabeled=1000, n_test=500, n_dev=200,
                 rotation=30.0, sigma=0.3):
    """(L, U, dev, test) drawn from the rotated two-Gaussian generator."""
    n_target = n_unlabeled + n_test + n_dev
    src, tgt = synth_domain_shift(n_source, n_target, rotation, sigma, seed)
    perm = np.random.default_rng([seed, 99]).permutation(n_target)
    U = tgt.subset(perm[:n_unlabeled]).without_labels()
    test = tgt.subset(perm[n_unlabeled:n_unlabeled + n_test])
    dev = tgt.subset(perm[n_unlabeled + n_test:])
    return src, U, dev, test


@pytest.fixture
def small_task():
    return rotated_task(0, n_source=60, n_unlabeled=120, n_test=80, n_dev=40)


@pytest.fixture
def blitzer_file(tmp_path):
    lines = [
        "great:2 movie:1 great_movie:1 #label#:positive",
        "bad:3 plot:1 bad_plot:1 #label#:negative",
        "great:1 plot:2 #label#:positive",
        "boring:1 movie:2 #label#:negative",
    ]
    path = tmp_path / "books.review"
    path.write_text("\n".join(lines) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
