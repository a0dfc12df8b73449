"""Graph construction, the synchronous round loop, message accounting,
trace invariant checking and trace serialization."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rsdd.core import AlgorithmConfig, explicit_schedule, harmonic_schedule
from rsdd.network_sim import (Graph, SimulationError, build_graph,
                              check_trace_invariants, load_trace,
                              message_stats, run, save_trace, trace_from_dict,
                              trace_to_dict)
from rsdd.problem_model import (AffineMap, AgentProblem,
                                ConstraintCoupledProblem, LocalSet,
                                build_random_instance, two_agent_demo)


def short_config(**overrides) -> AlgorithmConfig:
    base = dict(M=10.0, schedule=harmonic_schedule(1.0, 0.8), max_iters=10,
                enable_early_stop=False)
    base.update(overrides)
    return AlgorithmConfig(**base)


class TestBuildGraph:
    def test_path_three(self):
        # Nodes are 0-indexed: a 3-path is 0-1-2 and the middle node sees
        # both ends.
        g = build_graph("path", 3)
        assert g.edges == [(0, 1), (1, 2)]
        assert g.neighbors[1] == [0, 2]
        assert g.neighbors[0] == [1]

    def test_cycle(self):
        g = build_graph("cycle", 5)
        assert len(g.edges) == 5
        assert all(len(v) == 2 for v in g.neighbors.values())

    def test_star(self):
        g = build_graph("star", 6)
        assert len(g.edges) == 5
        assert len(g.neighbors[0]) == 5

    def test_complete_four(self):
        g = build_graph("complete", 4)
        assert len(g.edges) == 6
        assert len(g.directed_edges) == 12

    def test_erdos_renyi_connected_and_deterministic(self):
        g1 = build_graph("erdos_renyi", 10, p=0.3, seed=5)
        g2 = build_graph("erdos_renyi", 10, p=0.3, seed=5)
        assert g1.edges == g2.edges
        # Connectivity is enforced in the Graph constructor; reaching here
        # means the sampled graph passed it.
        assert g1.n_nodes == 10

    def test_erdos_renyi_needs_p(self):
        with pytest.raises(ValueError, match="probability"):
            build_graph("erdos_renyi", 10)

    def test_erdos_renyi_retries_exhausted(self):
        with pytest.raises(RuntimeError, match="100 draws"):
            build_graph("erdos_renyi", 30, p=0.001, seed=0)

    def test_too_few_nodes(self):
        with pytest.raises(ValueError, match="at least 2"):
            build_graph("path", 1)

    def test_unknown_topology(self):
        with pytest.raises(ValueError, match="unknown topology"):
            build_graph("torus", 4)

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            Graph(n_nodes=3, edges=[(0, 1), (1, 1)])

    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Graph(n_nodes=3, edges=[(0, 1), (1, 0), (1, 2)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            Graph(n_nodes=3, edges=[(0, 1), (1, 3)])

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError, match="not connected"):
            Graph(n_nodes=4, edges=[(0, 1), (2, 3)])


class TestRun:
    def test_snapshot_count(self, demo_trace):
        # One snapshot per executed update plus the initial state.
        assert demo_trace.iterations == 120
        assert len(demo_trace.snapshots) == 121
        assert demo_trace.status == "max-iters"

    def test_lambda_telescoping(self, demo_trace):
        # Sum over directed edges of (lambda_ij - lambda_ji) vanishes
        # identically, whatever the values are.
        for snap in demo_trace.snapshots:
            net = sum(v - snap.lam[(j, i)]
                      for (i, j), v in snap.lam.items())
            assert np.abs(net).max() <= 1e-9

    def test_demo_converges(self, demo_converged_trace, demo_oracle):
        trace = demo_converged_trace
        assert trace.status == "tolerance-met"
        assert trace.iterations < 5000
        last = trace.snapshots[-1]
        x = np.concatenate(last.x)
        assert np.abs(x - np.concatenate(demo_oracle.xs)).max() <= 1e-2

    def test_zero_steps_freeze_everything(self, demo):
        gammas = [0.0] * 10
        cfg = short_config(schedule=explicit_schedule(gammas), max_iters=5)
        with pytest.warns(UserWarning, match="unchecked"):
            trace = run(demo, build_graph("path", 2), cfg)
        first = trace.snapshots[0]
        for snap in trace.snapshots:
            for v in snap.lam.values():
                assert np.all(v == 0.0)
            # Identical QPs each round; only warm-start jitter at the demo's
            # weakly active optimum separates the re-solves.
            for xa, xb in zip(snap.x, first.x):
                assert np.abs(xa - xb).max() <= 1e-4
            assert np.abs(snap.mu - first.mu).max() <= 1e-5

    def test_node_count_mismatch(self, demo):
        with pytest.raises(ValueError, match="node count"):
            run(demo, build_graph("path", 3), short_config())

    def test_bad_m_rejected(self, demo):
        with pytest.raises(ValueError, match="M must be positive"):
            run(demo, build_graph("path", 2), short_config(M=0.0))

    def test_bad_schedule_rejected(self, demo):
        cfg = short_config(schedule=harmonic_schedule(1.0, 0.4))
        with pytest.raises(ValueError, match="invalid step-size schedule"):
            run(demo, build_graph("path", 2), cfg)

    def test_lambda_init_unknown_edge(self, demo):
        cfg = short_config(lambda_init={(0, 2): np.zeros(1)})
        with pytest.raises(ValueError, match="not in the graph"):
            run(demo, build_graph("path", 2), cfg)

    def test_lambda_init_bad_shape(self, demo):
        cfg = short_config(lambda_init={(0, 1): np.zeros(3)})
        with pytest.raises(ValueError, match="entries"):
            run(demo, build_graph("path", 2), cfg)

    def test_lambda_init_applied(self, demo):
        cfg = short_config(lambda_init={(0, 1): np.array([2.0])},
                           max_iters=3)
        trace = run(demo, build_graph("path", 2), cfg)
        snap0 = trace.snapshots[0]
        assert snap0.lam[(0, 1)][0] == 2.0
        assert snap0.lam[(1, 0)][0] == 0.0
        # The telescoping identity holds even for asymmetric starts.
        for snap in trace.snapshots:
            net = sum(v - snap.lam[(j, i)]
                      for (i, j), v in snap.lam.items())
            assert np.abs(net).max() <= 1e-9

    def test_solver_failure_preserves_trace(self):
        # Agent 1 carries contradictory equality rows, so its local QP is
        # infeasible and the very first round fails.
        broken = AgentProblem(
            dim=1, cost_quadratic=np.array([[2.0]]),
            cost_linear=np.zeros(1),
            local_set=LocalSet(lb=[-1.0], ub=[1.0],
                               a_eq=[[1.0], [1.0]], b_eq=[0.0, 1.0]),
            coupling=AffineMap(np.array([[1.0]]), np.array([0.0])))
        sane = AgentProblem(
            dim=1, cost_quadratic=np.array([[2.0]]),
            cost_linear=np.zeros(1),
            local_set=LocalSet(lb=[-1.0], ub=[1.0]),
            coupling=AffineMap(np.array([[1.0]]), np.array([0.0])))
        problem = ConstraintCoupledProblem(agents=[sane, broken],
                                           coupling_dim=1)
        with pytest.raises(SimulationError, match="iteration 0") as info:
            run(problem, build_graph("path", 2), short_config())
        trace = info.value.trace
        assert trace.status == "solver-error"
        assert trace.iterations == 0
        assert trace.snapshots == []


class TestMessages:
    def test_path_three_one_round(self):
        problem = build_random_instance(3, 2, 2, seed=11)
        cfg = short_config(max_iters=1)
        trace = run(problem, build_graph("path", 3), cfg)
        stats = message_stats(trace)
        assert stats.per_round == 8
        assert stats.rounds == 1
        assert stats.total == 8
        assert stats.payload_dim == 2
        assert trace.message_count == 8

    def test_complete_four_ten_rounds(self):
        problem = build_random_instance(4, 2, 2, seed=12)
        cfg = short_config(max_iters=10)
        trace = run(problem, build_graph("complete", 4), cfg)
        stats = message_stats(trace)
        assert stats.per_round == 24
        assert stats.total == 240
        assert stats.bytes_total == 240 * 8 * 2

    def test_zero_rounds(self, demo):
        trace = run(demo, build_graph("path", 2), short_config(max_iters=0))
        assert trace.iterations == 0
        assert len(trace.snapshots) == 1
        assert message_stats(trace).total == 0
        assert trace.message_count == 0

    def test_payload_schema(self, demo_trace):
        # Privacy: messages carry mu and lambda vectors only, one S-vector
        # per message, and the recorded payloads match the trace state.
        msgs = demo_trace.messages
        assert msgs is not None
        assert len(msgs) == demo_trace.message_count
        snapshots = {s.t: s for s in demo_trace.snapshots}
        for m in msgs:
            assert m.phase in ("lambda", "mu")
            assert m.payload.shape == (1,)
            snap = snapshots[m.iteration]
            if m.phase == "lambda":
                assert np.array_equal(m.payload, snap.lam[(m.sender,
                                                           m.receiver)])
            else:
                assert np.array_equal(m.payload, snap.mu[m.sender])

    def test_messages_off_by_default(self, demo_converged_trace):
        assert demo_converged_trace.messages is None


class TestDeterminism:
    def test_bit_identical_traces(self, demo):
        cfg = short_config(max_iters=40, record_messages=True)
        g = build_graph("path", 2)
        doc1 = json.dumps(trace_to_dict(run(demo, g, cfg)), sort_keys=True)
        doc2 = json.dumps(trace_to_dict(run(demo, g, cfg)), sort_keys=True)
        assert doc1 == doc2

    def test_random_instance_run_deterministic(self):
        problem = build_random_instance(3, 2, 2, seed=3)
        cfg = short_config(max_iters=25)
        g = build_graph("cycle", 3)
        t1 = run(problem, g, cfg)
        t2 = run(problem, g, cfg)
        for s1, s2 in zip(t1.snapshots, t2.snapshots):
            assert all(np.array_equal(a, b) for a, b in zip(s1.x, s2.x))
            assert np.array_equal(s1.mu, s2.mu)
            assert np.array_equal(s1.rho, s2.rho)


class TestTraceChecks:
    def test_clean_trace(self, demo_trace):
        assert check_trace_invariants(demo_trace) == []

    def test_clean_converged_trace(self, demo_converged_trace):
        assert check_trace_invariants(demo_converged_trace) == []

    def test_tampered_lambda_detected(self, demo_trace):
        trace = trace_from_dict(trace_to_dict(demo_trace))
        trace.snapshots[7].lam[(0, 1)] = trace.snapshots[7].lam[(0, 1)] + 5.0
        findings = check_trace_invariants(trace)
        assert any("iteration 7" in f and "lambda consistency" in f
                   for f in findings)

    def test_tampered_mu_detected(self, demo_trace):
        trace = trace_from_dict(trace_to_dict(demo_trace))
        trace.snapshots[3].mu[0, 0] = 10.0 + 1.0
        findings = check_trace_invariants(trace)
        assert any("iteration 3" in f and "multiplier cap" in f
                   for f in findings)

    def test_tampered_x_detected(self, demo_trace):
        trace = trace_from_dict(trace_to_dict(demo_trace))
        trace.snapshots[5].x[0] = trace.snapshots[5].x[0] + 50.0
        findings = check_trace_invariants(trace)
        assert any("iteration 5" in f and "feasibility" in f
                   for f in findings)

    def test_snapshot_bookkeeping_detected(self, demo_trace):
        trace = trace_from_dict(trace_to_dict(demo_trace))
        trace.snapshots.pop()
        findings = check_trace_invariants(trace)
        assert any("snapshot count" in f for f in findings)


class TestTraceSerialization:
    def test_round_trip_bit_exact(self, demo_trace, tmp_path):
        path = tmp_path / "trace.json"
        save_trace(demo_trace, path)
        loaded = load_trace(path)
        assert json.dumps(trace_to_dict(loaded), sort_keys=True) == \
            json.dumps(trace_to_dict(demo_trace), sort_keys=True)

    def test_loaded_trace_checks_clean(self, demo_trace, tmp_path):
        path = tmp_path / "trace.json"
        save_trace(demo_trace, path)
        assert check_trace_invariants(load_trace(path)) == []

    def test_not_a_trace(self):
        with pytest.raises(ValueError, match="not a trace"):
            trace_from_dict({"format": "something-else"})

    def test_messages_round_trip(self, demo_trace, tmp_path):
        path = tmp_path / "trace.json"
        save_trace(demo_trace, path)
        loaded = load_trace(path)
        assert loaded.messages is not None
        assert len(loaded.messages) == len(demo_trace.messages)
        m0, n0 = demo_trace.messages[0], loaded.messages[0]
        assert (m0.sender, m0.receiver, m0.phase, m0.iteration) == \
            (n0.sender, n0.receiver, n0.phase, n0.iteration)
        assert np.array_equal(m0.payload, n0.payload)
