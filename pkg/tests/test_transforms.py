import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minippl import ops
from minippl.autodiff import finite_difference, gradient
from minippl.core import Bernoulli, Beta, Normal, capture_trace, descendants, run, trace
from minippl.transforms import (
    Alignment,
    AlignmentError,
    MissingBindingError,
    UnusedBindingWarning,
    align_bindings,
    intervene,
    make_log_joint,
)

from test_core import dag_strategy, make_dag


def fig1():
    p = Beta(1.0, 1.0, name="p")
    return Bernoulli(probs=p, shape=50, name="x")


def two_node():
    z = Normal(0.0, 1.0, name="z")
    return Normal(z, 1.0, name="x")


class TestLogJoint:
    @pytest.mark.parametrize("x", [[1] * 50, [0] * 50])
    def test_fig1_half(self, x):
        lj = make_log_joint(fig1)
        assert ops.value(lj({"p": 0.5, "x": x})) == pytest.approx(-34.6573590, abs=1e-7)
        assert ops.value(lj({"p": 0.5, "x": x})) == pytest.approx(50 * math.log(0.5), rel=1e-14)

    def test_standard_normal_at_zero(self):
        lj = make_log_joint(lambda: Normal(0.0, 1.0, name="z"))
        assert ops.value(lj({"z": 0.0})) == pytest.approx(-0.9189385, abs=1e-7)

    def test_missing_binding(self):
        with pytest.raises(MissingBindingError, match="'x'"):
            make_log_joint(two_node)({"z": 0.0})

    def test_unused_binding_warns(self):
        with pytest.warns(UnusedBindingWarning, match="extra"):
            make_log_joint(two_node)({"z": 0.0, "x": 1.0, "extra": 3.0})

    def test_required_names_follow_bound_control_flow(self):
        def branch():
            c = Bernoulli(probs=0.5, name="c")
            if c.value == 1:
                Normal(0.0, 1.0, name="a")
            else:
                Normal(0.0, 1.0, name="b")

        lj = make_log_joint(branch)
        assert lj({"c": 1, "a": 0.0}) == pytest.approx(math.log(0.5) - 0.5 * math.log(2 * math.pi))
        with pytest.raises(MissingBindingError):
            lj({"c": 0, "a": 0.0})

    def test_gradient_through_bindings(self):
        lj = make_log_joint(two_node)
        f = lambda xs: lj({"z": xs[0], "x": xs[1]})
        at = [0.3, -1.1]
        np.testing.assert_allclose(gradient(f, at), finite_difference(f, at), rtol=1e-6)

    def test_does_not_consume_random_source(self):
        assert ops.value(make_log_joint(two_node)({"z": 0.0, "x": 0.0})) == pytest.approx(-math.log(2 * math.pi))


class TestIntervene:
    def test_downstream_mean(self):
        program = intervene(two_node, {"z": 10.0})
        rng = np.random.default_rng(0)
        xs = [ops.value(run(program, rng=rng, backend_name="plain").value) for _ in range(10_000)]
        assert abs(np.mean(xs) - 10.0) < 0.05

    def test_empty_do_is_identity(self):
        a = run(two_node, rng=5, backend_name="plain").value
        b = run(intervene(two_node, {}), rng=5, backend_name="plain").value
        assert a == b

    def test_absent_name_reported(self):
        program = intervene(two_node, {"z": 1.0, "nope": 2.0})
        run(program, rng=0)
        assert program.report.applied == {"z"}
        assert program.report.ignored == {"nope"}

    def test_log_joint_of_intervened_model_skips_the_mechanism(self):
        lj = make_log_joint(intervene(two_node, {"z": 2.0}))
        # z is a point mass: only x | z = 2 contributes, and z needs no binding
        assert ops.value(lj({"x": 2.0})) == pytest.approx(-0.5 * math.log(2 * math.pi))

    @settings(max_examples=30, deadline=None)
    @given(dag_strategy, st.integers(0, 2**31), st.data())
    def test_locality(self, dag, seed, data):
        n, adjacency, coefs = dag
        program, _ = make_dag(n, adjacency, coefs)
        target = f"v{data.draw(st.integers(0, n - 1))}"
        base = capture_trace(program, rng=seed)
        downstream = descendants(base, target)

        def snapshots(prog):
            snaps = {}

            def rec(constructor, *args, **kwargs):
                rv = constructor(*args, **kwargs)
                snaps[rv.name] = rv.distribution.snapshot()
                return rv

            run(lambda: trace(rec, prog), rng=seed, backend_name="plain")
            return snaps

        before = snapshots(program)
        after = snapshots(intervene(program, {target: 3.0}))
        for name in before:
            if name == target:
                continue
            if name in downstream:
                assert before[name] != after[name]
            else:
                assert before[name] == after[name]

    def test_intervention_differs_from_conditioning(self):
        def collider():
            a = Normal(0.0, 1.0, name="a")
            b = Normal(0.0, 1.0, name="b")
            return Normal(a + b, 0.5, name="z")

        rng = np.random.default_rng(1)
        program = intervene(collider, {"z": 1.0})
        captured = []

        def grab(constructor, *args, **kwargs):
            rv = constructor(*args, **kwargs)
            if rv.name == "a":
                captured.append(ops.value(rv.value))
            return rv

        for _ in range(10_000):
            run(lambda: trace(grab, program), rng=rng, backend_name="plain")
        do_mean = np.mean(captured)

        # brute-force rejection sampling of a | z close to 1
        m = 100_000
        a = rng.standard_normal(m)
        z = a + rng.standard_normal(m) + 0.5 * rng.standard_normal(m)
        cond_mean = a[np.abs(z - 1.0) < 0.05].mean()
        assert abs(do_mean) < 0.05
        assert cond_mean == pytest.approx(1.0 / 2.25, abs=0.08)
        assert cond_mean - do_mean > 0.3


class TestAlignment:
    def test_fig10_arrows(self):
        al = Alignment(latent={"z": "qz"}, observed={"x": "data_x"})
        b = align_bindings(["z", "x"], al, {"qz": 0.4}, {"data_x": [1.0, 2.0]})
        assert b == {"z": 0.4, "x": [1.0, 2.0]}

    def test_reversed_order_aligns_by_name(self):
        al = Alignment(latent={"z1": "q1", "z2": "q2"}, observed={"x": "x"})
        b = align_bindings(["z1", "z2", "x"], al, {"q2": 2.0, "q1": 1.0}, {"x": 0.0})
        assert b["z1"] == 1.0 and b["z2"] == 2.0

    def test_empty(self):
        assert align_bindings([], Alignment(), {}, {}) == {}

    def test_gap(self):
        with pytest.raises(AlignmentError, match="x"):
            align_bindings(["z", "x"], Alignment(latent={"z": "qz"}), {"qz": 0.0}, {})

    def test_dangling_key(self):
        with pytest.raises(AlignmentError, match="w"):
            align_bindings(["z"], Alignment(latent={"z": "qz", "w": "qw"}), {"qz": 0.0, "qw": 0.0}, {})

    def test_name_in_both_roles(self):
        with pytest.raises(AlignmentError):
            Alignment(latent={"z": "qz"}, observed={"z": "z"})

    def test_missing_data_key(self):
        with pytest.raises(AlignmentError):
            align_bindings(["x"], Alignment(observed={"x": "data_x"}), {}, {})
