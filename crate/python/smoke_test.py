"""Smoke test for the saddle_escape extension.

Build and run from the repository root:

    cargo build --release -p saddle-py --features extension-module
    cp target/release/libsaddle_escape.so python/saddle_escape.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import saddle_escape as se

A = [[1.0, 2.0], [2.0, 1.0]]


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    q = se.Objective.quartic(A, 1, tau=5.0)
    assert q.dim == 2 and q.split == 1
    assert close(q.value([1.0, 0.0]), 1.25)
    assert close(q.value([1 / math.sqrt(2), -1 / math.sqrt(2)]), -0.875)
    assert q.gradient([0.0, 0.0]) == [0.0, 0.0]
    assert q.hessian([0.0, 0.0]) == [[2.0, 4.0], [4.0, 2.0]]

    tr = q.run("pagd", [0.0, 0.0], 0.02, 1e-5, 1e-5, 1e-9, 2155, 20000, seed=11)
    assert tr["termination"]["cause"] == "returned_ss2", tr["termination"]
    f = q.value(tr["result"])
    assert abs(f + 2.0) <= 1e-3, f
    assert tr["events"][0]["t"] == 0

    agd = q.run("agd", [0.0, 0.0], 0.02, 0.0, 1e-5, 1e-9, 2155, 50)
    assert all(r["f"] == 0.0 for r in agd["records"])

    rep = se.verify_escape_lemma([[2.0, 4.0], [4.0, 2.0]], 1, 0.02, 2.0, 6.0, 4.0)
    assert rep["lemma"] == "pass", rep
    assert rep["lambda_max_mt"] > rep["lemma_bound"]

    k = se.derive_constants("pagd", 2, 4.0, 6.0, 1.0, 1e-4, 0.1, 2.0, 0.3)
    assert close(k["eta"], 0.3 / 4.0)

    x = se.sample_uniform_ball(5, 0.5, 3)
    assert len(x) == 5 and math.sqrt(sum(v * v for v in x)) <= 0.5
    assert x == se.sample_uniform_ball(5, 0.5, 3)

    m = se.random_saddle_matrix(4, 7)
    assert all(close(m[i][j], m[j][i]) for i in range(4) for j in range(4))

    mf = se.Objective.matfac([[1.0, 0.0], [0.0, 2.0]], 1, 3.0)
    assert mf.dim == 4 and close(mf.value([0.0] * 4), 5.0)

    try:
        se.Objective.quadratic(A, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("split 0 accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
