"""Smoke test for the qfb extension module. Run after building it with
`pip install --no-build-isolation -e crates/py`."""

import json
import math

import qfb


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    erasure = qfb.Channel.erasure(2, 0.25)
    assert erasure.is_mixture
    close(qfb.max_output_entropy(erasure).value, 0.75, 1e-4)

    identity = qfb.Channel.named("identity", d=4)
    report = qfb.max_output_entropy(identity)
    close(report.value, 2.0, 1e-4)
    assert json.loads(report.to_json())["value_bits"] == report.value

    loss = qfb.Channel.named("pure_loss", eta=0.8, cutoff=10)
    bound = qfb.max_output_entropy(loss, qfb.EnergyConstraint.photon_number(11, 1.0))
    assert bound.value <= qfb.g_function(0.8) + 1e-6
    close(bound.value, qfb.g_function(0.8), 1e-2)

    close(qfb.binary_entropy(0.25), 0.8112781244591328, 1e-12)
    close(qfb.von_neumann_entropy([[0.5, 0], [0, 0.5]]), 1.0, 1e-12)
    close(qfb.feedback_rate_bound(3, 0.0, 1.0), 3.0, 1e-12)

    out = qfb.Channel.named("amplitude_damping", gamma=1.0).apply([[0, 0], [0, 1]])
    close(out[0][0].real, 1.0, 1e-12)

    for suite in ["lemma1", "lemma2", "lemma3", "lemma3z"]:
        result = qfb.verify(suite, trials=20, seed=1)
        assert result.passed, result
    assert qfb.verify("thm1", trials=3, seed=1).passed

    spec = qfb.random_protocol(n=2, m=2, seed=11)
    trace = json.loads(qfb.simulate(spec))
    assert len(trace["rounds"]) == 2
    assert 0.0 <= trace["error_probability"] <= 1.0

    mixed = qfb.random_protocol(n=1, m=2, seed=3, channel=erasure)
    trace = json.loads(qfb.simulate(mixed))
    assert trace["mode"] == "mixture"
    assert trace["rounds"][0]["conditional_output_entropy"] is not None

    try:
        qfb.EnergyConstraint.photon_number(3, -1.0)
    except qfb.QfbError:
        pass
    else:
        raise AssertionError("infeasible constraint accepted")

    assert not math.isnan(qfb.g_function(1.0))
    print("qfb smoke test passed")


if __name__ == "__main__":
    main()
