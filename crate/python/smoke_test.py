#!/usr/bin/env python3
"""Smoke test for the calin_py extension module.

Build and stage the module first:

    cargo build -p calin-py --features extension-module
    cp target/debug/libcalin_py.so python/calin_py.so

then run `python3 python/smoke_test.py`.
"""
import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import calin_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def main():
    # Renormalization divides by total mass.
    probs = calin_py.renormalize([0.2, 0.3])
    approx(probs[0], 0.4)
    approx(probs[1], 0.6)

    # Blend stays between the population and subgroup diagonals and matches
    # the scalar expression.
    c = calin_py.blend([2.0, 2.0], [4.0, 1.0], 2.0)
    k = 1.0 / math.sqrt(3.0)
    approx(c[0], 2.0 + 2.0 * math.exp(-2.0 * k))
    approx(c[1], 2.0 - math.exp(-k))

    # A null calibrated by its own inverse is uniform.
    out = calin_py.apply_diagonal([1.0 / 0.8, 1.0 / 0.2], [0.8, 0.2])
    approx(out[0], 0.5, 1e-12)
    approx(out[1], 0.5, 1e-12)

    # Full calibration object: population + subgroup nulls -> final
    # matrices, applied to a query confidence.
    cal = calin_py.Calibration(
        [0.6, 0.4],
        {"young": [0.55, 0.45], "elder": [0.7, 0.3]},
        mode="bilevel",
    )
    assert cal.mode == "bilevel"
    assert cal.alpha > 0.0
    assert len(cal.population_diag) == 2
    conf, label, confidence = cal.apply("elder", [0.8, 0.2])
    assert label in (0, 1)
    approx(sum(conf), 1.0, 1e-12)
    approx(confidence, max(conf))

    # Metric report over a tiny record log.
    records = [
        {
            "id": f"r{i}",
            "attributes": {"sex": "male" if i % 2 == 0 else "female"},
            "true_label": i % 2,
            "classes": ["negative", "positive"],
            "raw_conf": [0.7, 0.3] if i % 2 == 0 else [0.3, 0.7],
            "predicted_label": i % 2,
            "predicted_confidence": 0.7,
        }
        for i in range(8)
    ]
    schema = {
        "attributes": [{"name": "sex", "values": ["male", "female"]}],
        "prompt_attributes": ["sex"],
    }
    report = json.loads(calin_py.evaluate_records(json.dumps(records), json.dumps(schema)))
    approx(report["accuracy"], 1.0)
    approx(report["ece"], 0.3)  # every prediction is 70% confident and right

    # End-to-end synthetic comparison: bi-level calibration improves both
    # calibration and the subgroup gap on the default biased task.
    result = json.loads(calin_py.simulate(n=2000, seed=11))
    assert set(result) >= {"vanilla", "bilevel"}
    assert result["bilevel"]["ece"] < result["vanilla"]["ece"]
    assert result["bilevel"]["cceg"]["age"] < result["vanilla"]["cceg"]["age"]

    # Errors surface as ValueError, not panics.
    try:
        calin_py.renormalize([0.0, 0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("degenerate scores should raise ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
