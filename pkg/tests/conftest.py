import numpy as np
import pytest

from busmorph.imgproc import MaskImage


def mask_from_rows(rows):
    """Build a mask from strings such as ``".#."``."""
    return MaskImage(np.array([[1 if ch == "#" else 0 for ch in r] for r in rows], dtype=np.uint8))


def padded(arr, pad=2):
    return MaskImage(np.pad(np.asarray(arr, dtype=np.uint8), pad))


def zhang_suen_reference(pixels):
    """Pixel-by-pixel Zhang-Suen thinning, written with plain loops."""
    img = [list(map(int, row)) for row in np.asarray(pixels)]
    h, w = len(img), len(img[0])

    def at(y, x):
        return img[y][x] if 0 <= y < h and 0 <= x < w else 0

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            doomed = []
            for y in range(h):
                for x in range(w):
                    if not img[y][x]:
                        continue
                    nb = [at(y - 1, x), at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1),
                          at(y + 1, x), at(y + 1, x - 1), at(y, x - 1), at(y - 1, x - 1)]
                    b = sum(nb)
                    a = sum(1 for i in range(8) if nb[i] == 0 and nb[(i + 1) % 8] == 1)
                    p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
                    if step == 0:
                        ok = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        ok = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if 2 <= b <= 6 and a == 1 and ok:
                        doomed.append((y, x))
            for y, x in doomed:
                img[y][x] = 0
            changed = changed or bool(doomed)
    return np.array(img, dtype=np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion."""
    outcome = {}
    for status in ("passed", "skipped", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::")[-1][len("test_criterion_"):]
            if outcome.get(name) not in ("FAIL",):
                outcome[name] = {"passed": "PASS", "skipped": "SKIP"}.get(status, "FAIL")
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(outcome):
        number, _, label = name.partition("_")
        terminalreporter.write_line(f"criterion {number} {label.replace('_', ' ')}: {outcome[name]}")
