"""Smoke test for the tailcomb Python extension.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or put a
copy of the compiled library named `tailcomb.so` on PYTHONPATH.
"""

import csv
import io
import json
import math

import tailcomb


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    assert close(tailcomb.t_copula_lambda(1.0, 0.0), 1.0 - math.sqrt(0.5))
    assert close(tailcomb.pareto_transform(0.25), 4.0)
    assert close(tailcomb.student_t_cdf(0.0, 3.0), 0.5)

    axes = tailcomb.AngularMeasure.axes(2)
    pm = tailcomb.Combiner("powermean:2", 2)
    assert close(tailcomb.asymptotic_ratio(pm, axes), math.sqrt(2.0))
    assert tailcomb.classify(pm, axes) == "liberal"
    lin = tailcomb.Combiner("linear", 2)
    m = tailcomb.AngularMeasure.standardized([[0.2, 0.8], [0.7, 0.3]])
    assert close(tailcomb.asymptotic_ratio(lin, m), 1.0)
    back = tailcomb.AngularMeasure.from_json(m.to_json())
    assert back.weights == m.weights

    tippett = tailcomb.CombinationTest("tippett", 3)
    assert close(tippett.combined_pvalue([0.01, 0.5, 0.9]), 1.0 - 0.99 ** 3)

    model = tailcomb.Model.preset("t", 4, nu=2.0)
    rows = model.sample_pvalues(1000, 7)
    assert len(rows) == 1000 and all(0.0 < p < 1.0 for r in rows for p in r)
    assert rows == model.sample_pvalues(1000, 7)

    text = tailcomb.calibrate(model, "pct,cct", [0.05], 2000, seed=3, workers=1)
    records = list(csv.DictReader(io.StringIO(text)))
    assert [r["test"] for r in records] == ["cct", "pct"]

    report = json.loads(tailcomb.falsify(tailcomb.Combiner("tippett", 2), 2, budget=300))
    assert report["best_ratio"] < 1.0

    try:
        tailcomb.Combiner("nope", 2)
    except ValueError:
        pass
    else:
        raise AssertionError("bad combiner accepted")

    print("tailcomb", tailcomb.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
