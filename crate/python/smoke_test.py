"""Smoke test for the autostpp_py extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import json
import math

import autostpp_py as ap


def check_derivatives():
    net = ap.Mlp([3, 8, 8, 1], activation="tanh", seed=1)
    x = [[0.1, -0.4, 0.7], [1.2, 0.3, -0.5]]
    dp = net.dnforward(x, [0, 1, 2])
    naive = net.naive_dnforward(x, [0, 1, 2])
    for a, b in zip(dp, naive):
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a)), (a, b)
    h = 1e-5
    xp = [[0.1 + h, -0.4, 0.7]]
    xm = [[0.1 - h, -0.4, 0.7]]
    fd = (net.forward(xp)[0] - net.forward(xm)[0]) / (2 * h)
    d0 = net.dnforward([x[0]], [0])[0]
    assert abs(fd - d0) < 1e-6 * max(1.0, abs(d0)), (fd, d0)


def check_prodsum():
    ps = ap.ProdSum(n_terms=2, hidden=[8, 8], seed=3)
    assert all(v >= 0.0 for v in ps.influence([(0.1, 0.2, 0.3), (-0.5, 0.4, 1.0)]))
    whole = ps.cuboid_integral([-1.0, -1.0, 0.0], [1.0, 1.0, 2.0])
    left = ps.cuboid_integral([-1.0, -1.0, 0.0], [0.0, 1.0, 2.0])
    right = ps.cuboid_integral([0.0, -1.0, 0.0], [1.0, 1.0, 2.0])
    assert abs(whole - (left + right)) < 1e-10 * max(1.0, whole)


def check_model():
    events = ap.simulate("stsc", "ds1", 200.0, seed=4)
    assert events == ap.simulate("stsc", "ds1", 200.0, seed=4)
    train, val, test = ap.split(events, 200.0, 10, (8, 1, 1))
    assert len(train) == 8 and len(val) == 1 and len(test) == 1
    rate = sum(len(w) for w in train) / (8 * 20.0)
    model = ap.Model((0.0, 1.0, 0.0, 1.0), rate, seed=0, hidden=[8])
    before = model.log_likelihood(test[0], 20.0)
    fitted, log = model.fit(train, val, 20.0, lr=4e-3, epochs=2, seed=0)
    assert len(log) == 2 and all(math.isfinite(v) for _, a, b in log for v in (a, b))
    after = fitted.log_likelihood(test[0], 20.0)
    assert math.isfinite(before) and math.isfinite(after)

    lam = fitted.intensity(0.5, 0.5, 10.0, test[0])
    assert lam >= fitted.mu > 0.0
    grid = fitted.intensity_grid(10.0, test[0], grid=11)
    assert len(grid) == 121 and min(grid) >= fitted.mu

    restored = ap.Model.from_json(fitted.to_json())
    assert restored.log_likelihood(test[0], 20.0) == after
    assert json.loads(fitted.to_json())["version"] == 1


def check_metrics():
    assert ap.hellinger([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert ap.hellinger([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert abs(ap.hellinger([0.5, 0.5], [0.9, 0.1]) - 0.3249) < 1e-4
    rows = ap.bench(layers=[1], orders=[1], width=4, batch=8, repeats=3)
    assert {r[3] for r in rows} == {"dp", "naive"}


def check_errors():
    for bad in (lambda: ap.simulate("nope", "ds1", 10.0),
                lambda: ap.Model((0.0, 1.0, 0.0, 1.0), -1.0),
                lambda: ap.Mlp([2, 3, 1], activation="relu")):
        try:
            bad()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


if __name__ == "__main__":
    check_derivatives()
    check_prodsum()
    check_model()
    check_metrics()
    check_errors()
    print("smoke test passed")
