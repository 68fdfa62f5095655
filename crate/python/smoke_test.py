"""Smoke test for the Python bindings.

Build and install the extension first, for example with
``pip install --no-build-isolation ./crates/py`` (needs maturin), then run
``python python/smoke_test.py``.
"""

import math

import saddlepoint_py as sp


def swap_matrix():
    return 2, 2, [(0, 1, 1.0), (1, 0, 1.0)]


def main():
    m, n, entries = swap_matrix()
    assert abs(sp.gap("l1l1", m, n, entries, [0.5, 0.5], [0.5, 0.5])) < 1e-12
    assert abs(sp.gap("l1l1", m, n, entries, [1.0, 0.0], [1.0, 0.0]) - 1.0) < 1e-12

    # the center of both simplices is far from optimal for diag(1, 2)
    diag = [(0, 0, 1.0), (1, 1, 2.0)]
    for geometry, method in [("l1l1", "sublinear"), ("l2l1", "vr"), ("l2l2", "mirror-prox")]:
        x, y, gap, touched = sp.solve(geometry, method, 2, 2, diag, 0.1, seed=1)
        assert len(x) == 2 and len(y) == 2
        assert 0.0 <= gap <= 0.12, (geometry, method, gap)
        assert touched > 0 or geometry == "l2l2"

    x = sp.regression(2, 2, [(0, 0, 2.0), (1, 1, 2.0)], [2.0, 4.0], 4.0, 1e-3, seed=0)
    assert math.dist(x, [1.0, 2.0]) <= 1e-2, x

    center, radius = sp.min_eb([[0.0, 0.0], [1.0, 0.0]], 0.05)
    assert 0.5 <= radius <= 0.525, radius
    _, exact = sp.welzl([[0.0, 0.0], [1.0, 0.0]])
    assert abs(exact - 0.5) < 1e-12

    square = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
    center, radius = sp.max_ib(square, [1.0] * 4, 0.1, r_bound=2.0)
    assert radius >= 0.9, radius

    try:
        sp.regression(2, 2, [(0, 0, 1.0), (1, 1, 1.0)], [1.0, 1.0], 0.0, 1e-3)
    except ValueError:
        pass
    else:
        raise AssertionError("mu = 0 should be rejected")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
