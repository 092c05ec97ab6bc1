import numpy as np
import pytest

from qahoi import numerics as nx
from qahoi.evaluation import HOIClassTable
from qahoi.structures import GroundTruthSet, HOIAnnotation, HOIInstance, ImagePredictions


@pytest.fixture(autouse=True)
def _float64():
    with nx.default_dtype(np.float64):
        yield


def random_box(rng, size=64.0, lo=6.0, hi=30.0):
    w, h = rng.uniform(lo, hi, 2)
    x1, y1 = rng.uniform(0, size - w), rng.uniform(0, size - h)
    return (float(x1), float(y1), float(x1 + w), float(y1 + h))


def jitter(box, rng, scale, size=64.0):
    x1, y1, x2, y2 = (v + rng.normal(0, scale) for v in box)
    x1, y1 = max(0.0, min(x1, x2 - 1)), max(0.0, min(y1, y2 - 1))
    return (x1, y1, min(size, x2), min(size, y2))


def random_eval_set(rng, num_images=5, num_objects=2, num_actions=3, max_preds=100):
    """Ground truth plus noisy detections with distinct continuous scores."""
    table = HOIClassTable([(o, a) for o in range(num_objects) for a in range(num_actions)],
                          rng.integers(0, 20, num_objects * num_actions).tolist())
    gts, preds = [], []
    budget = max_preds
    for n in range(num_images):
        anns = []
        for _ in range(int(rng.integers(0, 4))):
            acts = tuple(sorted(rng.choice(num_actions, size=int(rng.integers(1, 3)), replace=False).tolist()))
            anns.append(HOIAnnotation(random_box(rng), random_box(rng), int(rng.integers(num_objects)), acts))
        gt = GroundTruthSet(f"im{n}", 64, 64, anns)
        gts.append(gt)
        instances = []
        share = budget if n == num_images - 1 else int(rng.integers(0, budget // 2 + 1))
        budget -= share
        for q in range(share):
            if anns and rng.random() < 0.6:
                ann = anns[int(rng.integers(len(anns)))]
                hb, ob = jitter(ann.human_box, rng, 3.0), jitter(ann.object_box, rng, 3.0)
                obj = ann.object_class if rng.random() < 0.8 else int(rng.integers(num_objects))
                act = int(rng.choice(ann.actions)) if rng.random() < 0.8 else int(rng.integers(num_actions))
            else:
                hb, ob = random_box(rng), random_box(rng)
                obj, act = int(rng.integers(num_objects)), int(rng.integers(num_actions))
            norm = np.array([64.0, 64.0, 64.0, 64.0])
            c_o, c_a = rng.uniform(0.05, 1.0, 2)
            instances.append(HOIInstance(tuple(np.array(hb) / norm), tuple(np.array(ob) / norm), obj, float(c_o),
                                         act, float(c_a), float(c_o * c_a), q))
        preds.append(ImagePredictions(gt.image_id, 64, 64, instances))
    return preds, gts, table


def random_instances(rng, n, num_actions=5):
    """Clustered random instances so that overlaps span the whole [0, 1] range."""
    centers = [(random_box(rng, 1.0, 0.05, 0.4), random_box(rng, 1.0, 0.05, 0.4)) for _ in range(max(1, n // 8))]
    out = []
    for q in range(n):
        h, o = centers[int(rng.integers(len(centers)))]
        hb = tuple(float(v) for v in np.array(h) + rng.normal(0, 0.03, 4))
        ob = tuple(float(v) for v in np.array(o) + rng.normal(0, 0.03, 4))
        c_o, c_a = rng.uniform(0, 1, 2)
        out.append(HOIInstance(hb, ob, 0, float(c_o), int(rng.integers(num_actions)), float(c_a),
                               float(c_o * c_a), q))
    return out


# -- acceptance summary ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        status = "PASS" if report.passed else "FAIL"
        _CRITERIA[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} {status}: {title}")
