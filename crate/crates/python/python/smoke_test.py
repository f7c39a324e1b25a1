"""Smoke test for the capred Python module.

Build and install first, e.g. `maturin build -m crates/python/Cargo.toml`
followed by `pip install target/wheels/capred-*.whl`.
"""

import json
import math

import capred


def main():
    pinch = capred.Map("pinch:[3];blocks=1,1,1")
    assert pinch.source == [3] and pinch.certificate == "Pinching"
    assert pinch.definite_dim() == 3
    assert not pinch.is_ergodic()

    tree = json.loads(capred.reduce_capacity(pinch))
    assert abs(tree["value"] - math.log(3)) < 1e-9, tree

    ident = capred.Map("id:[2]")
    result = json.loads(capred.optimize_capacity(ident, restarts=4, seed=1))
    assert abs(result["value"] - math.log(2)) < 1e-4, result

    bsc = json.loads(capred.blahut_arimoto([[0.9, 0.1], [0.1, 0.9]]))
    expected = math.log(2) + 0.1 * math.log(0.1) + 0.9 * math.log(0.9)
    assert abs(bsc["value"] - expected) < 1e-9, bsc

    fixture = capred.Map("depol:[3];corner=2,3")
    parts = json.loads(capred.decompose(fixture))
    assert parts["definiteDim"] == 2
    again = capred.Map.from_json(fixture.to_json())
    assert again.matrix() == fixture.matrix()

    max_err, min_slack = capred.verify_entropy_inequality("[2,2]", samples=200, seed=5)
    assert max_err < 1e-9 and min_slack > -1e-9

    try:
        capred.Map("pinch:[2];blocks=3")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid map accepted")

    print("capred smoke test passed")


if __name__ == "__main__":
    main()
