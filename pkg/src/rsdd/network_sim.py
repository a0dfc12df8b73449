"""Synchronous message-passing simulation over a connected undirected graph.

Each round has four phases with a barrier between them: every agent gathers
the edge variables lambda_ji from its neighbors, solves its relaxed local
problem, gathers the neighbors' fresh coupling multipliers mu_j, and applies
the edge-variable update with the round's step size.  Messages carry only
lambda and mu vectors (never local variables, costs or constraint data), so
the simulation exchanges exactly what a real transport would.

The run is recorded in a :class:`RunTrace` holding one snapshot per round
plus the initial state, message accounting, and any diagnostics; traces
serialize to JSON and can be re-checked against the method's per-iteration
invariants long after the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .core import (AlgorithmConfig, LocalSolverPool, schedule_from_dict,
                   step_size, validate_schedule)
from .problem_model import (ConstraintCoupledProblem, problem_from_dict,
                            problem_hash, problem_to_dict)
from .qp_solver import QpError

_CONSISTENCY_TOL = 1e-9
_FEAS_SLACK = 1e-6
_MU_CAP_SLACK = 1e-8
_M_PIN_TOL = 1e-6
_M_PIN_STREAK = 50


@dataclass
class Graph:
    """Undirected connected communication graph on nodes 0..n_nodes-1."""

    n_nodes: int
    edges: list[tuple[int, int]]

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("graph needs at least one node")
        norm = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        self.edges = sorted(norm)
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(self.edges)
        if self.n_nodes > 1 and not nx.is_connected(g):
            raise ValueError("graph is not connected")

    @property
    def neighbors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {i: [] for i in range(self.n_nodes)}
        for i, j in self.edges:
            out[i].append(j)
            out[j].append(i)
        return {i: sorted(v) for i, v in out.items()}

    @property
    def directed_edges(self) -> list[tuple[int, int]]:
        return sorted([(i, j) for i, j in self.edges] +
                      [(j, i) for i, j in self.edges])

    def to_dict(self) -> dict:
        return {"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges]}


def build_graph(topology: str, n_nodes: int, p: float | None = None,
                seed: int | None = None) -> Graph:
    """Construct a named topology: path, cycle, star, complete, or
    erdos_renyi (which resamples until connected, at most 100 draws)."""
    if n_nodes < 2:
        raise ValueError("topologies need at least 2 nodes")
    if topology == "path":
        g = nx.path_graph(n_nodes)
    elif topology == "cycle":
        g = nx.cycle_graph(n_nodes)
    elif topology == "star":
        g = nx.star_graph(n_nodes - 1)
    elif topology == "complete":
        g = nx.complete_graph(n_nodes)
    elif topology == "erdos_renyi":
        if p is None:
            raise ValueError("erdos_renyi needs an edge probability p")
        base = 0 if seed is None else int(seed)
        for attempt in range(100):
            g = nx.gnp_random_graph(n_nodes, p, seed=base + attempt)
            if nx.is_connected(g):
                break
        else:
            raise RuntimeError(
                f"no connected graph in 100 draws (n={n_nodes}, p={p})")
    else:
        raise ValueError(f"unknown topology '{topology}'")
    return Graph(n_nodes=n_nodes, edges=[tuple(e) for e in g.edges()])


@dataclass
class Message:
    """One directed transmission; the payload is a single S-vector."""

    sender: int
    receiver: int
    phase: str  # "lambda" or "mu"
    iteration: int
    payload: np.ndarray


@dataclass
class Snapshot:
    """Network state at round t: local solutions solved at the edge
    variables lam, which are the values in force during that solve."""

    t: int
    x: list[np.ndarray]
    rho: np.ndarray
    mu: np.ndarray
    lam: dict[tuple[int, int], np.ndarray]


@dataclass
class RunTrace:
    problem: dict
    problem_hash: str
    graph: Graph
    config: dict
    snapshots: list[Snapshot]
    status: str  # max-iters | tolerance-met | solver-error
    iterations: int
    message_count: int
    bytes_estimate: int
    warnings: list[str] = field(default_factory=list)
    messages: list[Message] | None = None


@dataclass
class MessageStats:
    rounds: int
    per_round: int
    total: int
    payload_dim: int
    bytes_total: int


class SimulationError(RuntimeError):
    """Local solver failed mid-run; carries the trace up to the failure."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


def _coupling_totals(problem: ConstraintCoupledProblem,
                     xs: list[np.ndarray]) -> np.ndarray:
    total = np.zeros(problem.coupling_dim)
    for agent, x in zip(problem.agents, xs):
        total += agent.g(x)
    return total


def run(problem: ConstraintCoupledProblem, graph: Graph,
        config: AlgorithmConfig) -> RunTrace:
    """Execute the distributed method and record everything.

    Round t solves every agent's relaxed local problem at the current edge
    variables lambda(t), records the snapshot (x, rho, mu, lambda(t)), then
    updates each directed edge with step size gamma_t.  ``config.max_iters``
    counts updates, so a completed run holds max_iters + 1 snapshots.

    Early stop (when enabled) triggers once max coupling violation and the
    sum of relaxation levels are within tolerance and the cost has been flat
    over the trailing window.

    Raises
    ------
    SimulationError
        A local solve failed; the partial trace (status "solver-error")
        rides on the exception.
    """
    if graph.n_nodes != problem.n_agents:
        raise ValueError("graph node count must equal the number of agents")
    if config.M <= 0:
        raise ValueError("M must be positive")
    if config.max_iters < 0:
        raise ValueError("max_iters must be nonnegative")
    rejection = validate_schedule(config.schedule)
    if rejection is not None:
        raise ValueError(f"invalid step-size schedule: {rejection}")

    s_dim = problem.coupling_dim
    neighbors = graph.neighbors
    dir_edges = graph.directed_edges
    lam: dict[tuple[int, int], np.ndarray] = {
        e: np.zeros(s_dim) for e in dir_edges}
    if config.lambda_init:
        for e, v in config.lambda_init.items():
            e = (int(e[0]), int(e[1]))
            if e not in lam:
                raise ValueError(f"lambda_init edge {e} is not in the graph")
            v = np.asarray(v, dtype=float).ravel()
            if v.shape != (s_dim,):
                raise ValueError(f"lambda_init[{e}] must have {s_dim} entries")
            lam[e] = v.copy()

    pool = LocalSolverPool(problem, config.M, tol=config.solver_tol)
    snapshots: list[Snapshot] = []
    warnings_log: list[str] = []
    messages: list[Message] | None = [] if config.record_messages else None
    costs: list[float] = []
    pin_streak = 0
    pin_warned = False
    t = 0
    status = "max-iters"

    def make_trace(final_status: str, rounds: int) -> RunTrace:
        count = 2 * len(dir_edges) * rounds
        return RunTrace(problem=problem_to_dict(problem),
                        problem_hash=problem_hash(problem),
                        graph=graph, config=config.to_dict(),
                        snapshots=snapshots, status=final_status,
                        iterations=rounds, message_count=count,
                        bytes_estimate=count * 8 * s_dim,
                        warnings=warnings_log, messages=messages)

    while True:
        shifts = []
        for i in range(graph.n_nodes):
            sh = np.zeros(s_dim)
            for j in neighbors[i]:
                sh += lam[(i, j)] - lam[(j, i)]
            shifts.append(sh)
        try:
            results = pool.solve_all(shifts)
        except QpError as exc:
            raise SimulationError(
                f"local solver failed at iteration {t}: {exc}",
                make_trace("solver-error", t)) from exc

        xs = [r.x for r in results]
        rho = np.array([r.rho for r in results])
        mu = np.stack([r.mu for r in results])
        snapshots.append(Snapshot(t=t, x=xs, rho=rho, mu=mu,
                                  lam={e: v.copy() for e, v in lam.items()}))
        costs.append(problem.total_cost(xs) + config.M * float(rho.sum()))

        if np.any(mu.sum(axis=1) >= config.M - _M_PIN_TOL):
            pin_streak += 1
            if pin_streak > _M_PIN_STREAK and not pin_warned:
                warnings_log.append(
                    f"M={config.M:g} likely too small: some agent's "
                    f"multiplier sum stayed within {_M_PIN_TOL:g} of M for "
                    f"more than {_M_PIN_STREAK} consecutive iterations")
                pin_warned = True
        else:
            pin_streak = 0

        if t >= config.max_iters:
            status = "max-iters"
            break
        if config.enable_early_stop and t >= config.stop_window:
            viol = float(_coupling_totals(problem, xs).max())
            flat = abs(costs[-1] - costs[-1 - config.stop_window]) \
                <= config.stop_cost_change * max(1.0, abs(costs[-1]))
            if (max(viol, 0.0) <= config.stop_violation
                    and rho.sum() <= config.stop_sum_rho and flat):
                status = "tolerance-met"
                break

        gamma = step_size(config.schedule, t)
        if messages is not None:
            for i, j in dir_edges:
                messages.append(Message(sender=i, receiver=j, phase="lambda",
                                        iteration=t, payload=lam[(i, j)].copy()))
            for i, j in dir_edges:
                messages.append(Message(sender=i, receiver=j, phase="mu",
                                        iteration=t, payload=mu[i].copy()))
        new_lam = {(i, j): lam[(i, j)] - gamma * (mu[i] - mu[j])
                   for i, j in dir_edges}
        lam = new_lam
        t += 1

    return make_trace(status, t)


def message_stats(trace: RunTrace) -> MessageStats:
    """Message totals: each executed round moves one lambda and one mu
    vector along every directed edge."""
    per_round = 2 * 2 * len(trace.graph.edges)
    s_dim = _trace_coupling_dim(trace)
    total = per_round * trace.iterations
    return MessageStats(rounds=trace.iterations, per_round=per_round,
                        total=total, payload_dim=s_dim,
                        bytes_total=total * 8 * s_dim)


def _trace_coupling_dim(trace: RunTrace) -> int:
    return int(trace.problem["coupling_dim"])


def check_trace_invariants(trace: RunTrace) -> list[str]:
    """Re-derive the method's per-iteration guarantees from a recorded trace.

    Checks, for every snapshot: aggregate relaxed feasibility
    sum_i g_i(x_i) <= (sum_i rho_i) * 1 within 1e-6; the telescoping edge
    identity sum_ij (lambda_ij - lambda_ji) = 0 within 1e-9; the multiplier
    cap mu_i . 1 <= M + 1e-8; and the bounded disagreement
    ||mu_i - mu_j||_2 <= 2 M sqrt(S) across edges.  Each recorded edge
    transition is also replayed against the update rule
    lambda - gamma_t * (mu_i - mu_j), which is what catches a tampered or
    corrupted lambda entry (the telescoping sum alone cancels any
    single-edge edit).  Also checks the snapshot-count bookkeeping.
    Returns human-readable findings; an empty list means the trace is clean.
    """
    findings: list[str] = []
    problem = problem_from_dict(trace.problem)
    m_price = float(trace.config["M"])
    s_dim = problem.coupling_dim
    if len(trace.snapshots) != trace.iterations + 1 \
            and trace.status != "solver-error":
        findings.append(
            f"snapshot count {len(trace.snapshots)} does not equal "
            f"iterations+1 = {trace.iterations + 1}")
    spread_cap = 2.0 * m_price * float(np.sqrt(s_dim))
    for snap in trace.snapshots:
        t = snap.t
        total = _coupling_totals(problem, snap.x)
        slack = total - float(snap.rho.sum())
        if slack.max() > _FEAS_SLACK:
            findings.append(
                f"iteration {t}: aggregate feasibility violated, "
                f"max_s(sum g - sum rho) = {slack.max():.3e}")
        net = np.zeros(s_dim)
        for (i, j), v in snap.lam.items():
            net += v - snap.lam[(j, i)]
        if np.abs(net).max() > _CONSISTENCY_TOL:
            findings.append(
                f"iteration {t}: lambda consistency violated, "
                f"|sum (lambda_ij - lambda_ji)| = {np.abs(net).max():.3e}")
        cap = snap.mu.sum(axis=1).max()
        if cap > m_price + _MU_CAP_SLACK:
            findings.append(
                f"iteration {t}: multiplier cap violated, "
                f"max_i mu_i.1 = {cap:.10e} > M = {m_price:g}")
        for i, j in trace.graph.edges:
            d = float(np.linalg.norm(snap.mu[i] - snap.mu[j]))
            if d > spread_cap + _MU_CAP_SLACK:
                findings.append(
                    f"iteration {t}: multiplier spread violated on edge "
                    f"({i}, {j}): {d:.6e} > {spread_cap:.6e}")
    schedule = schedule_from_dict(trace.config["schedule"])
    for prev, snap in zip(trace.snapshots, trace.snapshots[1:]):
        gamma = step_size(schedule, prev.t)
        worst = 0.0
        for (i, j), v in snap.lam.items():
            expect = prev.lam[(i, j)] - gamma * (prev.mu[i] - prev.mu[j])
            worst = max(worst, float(np.abs(v - expect).max()))
        if worst > _CONSISTENCY_TOL:
            findings.append(
                f"iteration {snap.t}: lambda consistency violated, edge "
                f"update replay differs by {worst:.3e}")
    return findings


def _snapshot_to_dict(snap: Snapshot) -> dict:
    return {"t": snap.t,
            "x": [x.tolist() for x in snap.x],
            "rho": snap.rho.tolist(),
            "mu": snap.mu.tolist(),
            "lambda": {f"{i},{j}": v.tolist()
                       for (i, j), v in sorted(snap.lam.items())}}


def _snapshot_from_dict(doc: dict) -> Snapshot:
    lam = {}
    for key, v in doc["lambda"].items():
        i, j = key.split(",")
        lam[(int(i), int(j))] = np.asarray(v, dtype=float)
    return Snapshot(t=int(doc["t"]),
                    x=[np.asarray(v, dtype=float) for v in doc["x"]],
                    rho=np.asarray(doc["rho"], dtype=float),
                    mu=np.asarray(doc["mu"], dtype=float),
                    lam=lam)


def trace_to_dict(trace: RunTrace) -> dict:
    doc = {"format": "rsdd-trace", "version": 1,
           "problem": trace.problem, "problem_hash": trace.problem_hash,
           "graph": trace.graph.to_dict(), "config": trace.config,
           "status": trace.status, "iterations": trace.iterations,
           "message_count": trace.message_count,
           "bytes_estimate": trace.bytes_estimate,
           "warnings": list(trace.warnings),
           "snapshots": [_snapshot_to_dict(s) for s in trace.snapshots]}
    if trace.messages is not None:
        doc["messages"] = [{"sender": m.sender, "receiver": m.receiver,
                            "phase": m.phase, "iteration": m.iteration,
                            "payload": m.payload.tolist()}
                           for m in trace.messages]
    return doc


def trace_from_dict(doc: dict) -> RunTrace:
    if doc.get("format") != "rsdd-trace":
        raise ValueError("not a trace document")
    messages = None
    if "messages" in doc:
        messages = [Message(sender=int(m["sender"]),
                            receiver=int(m["receiver"]), phase=m["phase"],
                            iteration=int(m["iteration"]),
                            payload=np.asarray(m["payload"], dtype=float))
                    for m in doc["messages"]]
    return RunTrace(problem=doc["problem"], problem_hash=doc["problem_hash"],
                    graph=Graph(n_nodes=int(doc["graph"]["n_nodes"]),
                                edges=[tuple(e) for e in doc["graph"]["edges"]]),
                    config=doc["config"], status=doc["status"],
                    iterations=int(doc["iterations"]),
                    message_count=int(doc["message_count"]),
                    bytes_estimate=int(doc["bytes_estimate"]),
                    warnings=list(doc.get("warnings", [])),
                    snapshots=[_snapshot_from_dict(s) for s in doc["snapshots"]],
                    messages=messages)


def save_trace(trace: RunTrace, path) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(trace_to_dict(trace), fh)


def load_trace(path) -> RunTrace:
    import json

    with open(path) as fh:
        return trace_from_dict(json.load(fh))
