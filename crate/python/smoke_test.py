"""Smoke test for the gpcsa_py extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math
import random

import gpcsa_py as g


def main():
    model = g.OnOffModel("exp(1) / exp(1)")
    table = g.IdleProbTable(model)
    assert abs(table.p_off_off(0.5) - (0.5 + 0.5 * math.exp(-1.0))) < 1e-12
    assert abs(table.p_on_off(0.5) + table.p_on_on(0.5) - 1.0) < 1e-12
    assert abs(table.roots[0] + 2.0) < 1e-12

    hed = g.OnOffModel.with_duty_cycle("hed(0.9:10, 0.1:0.1)", 0.3)
    assert abs(hed.duty_cycle - 0.3) < 1e-12
    t = g.IdleProbTable(hed)
    p, se = g.oracle(hed, 0.7, trials=200_000, seed=3)
    assert abs(p - t.p_off_off(0.7)) < 4 * se, (p, se, t.p_off_off(0.7))

    assert g.testbed_mac(4) == (4, 235.0, 2)

    rng = random.Random(1)
    xs = [rng.expovariate(5.0) if rng.random() < 0.7 else rng.expovariate(0.2) for _ in range(5000)]
    literal, loglik, converged = g.fit_hed(xs, 2)
    assert literal.startswith("hed("), literal
    assert math.isfinite(loglik)

    scenario = g.Scenario.from_toml(
        """
[scenario]
name = "smoke"
horizon = "60s"
seeds = [1, 2]
policies = ["generalized_predictive", "predictive_exponential"]

[[channel]]
off = "hed(0.9:10, 0.1:0.1)"
duty_cycle = 0.3

[[channel]]
off = "exp(1)"
duty_cycle = 0.3
"""
    )
    exp = scenario.run(jobs=1)
    assert len(exp) == 4
    assert "delta_switch_rate_pct" in exp.aggregate_csv().splitlines()[0]
    assert exp.aggregate_csv() == scenario.run(jobs=2).aggregate_csv()
    records = json.loads(exp.records_json())
    hashes = {r["seed"]: set() for r in records}
    for r in records:
        hashes[r["seed"]].add(r["trace_hash"])
    assert all(len(h) == 1 for h in hashes.values())

    try:
        g.OnOffModel("exp(-1) / exp(1)")
    except ValueError:
        pass
    else:
        raise AssertionError("negative rate accepted")

    print("gpcsa_py smoke test ok")


if __name__ == "__main__":
    main()
