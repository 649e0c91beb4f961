"""Scenarios, the episode loop, batch metrics and trace/metrics files.

Within one step the order is fixed::

    robot additions -> policy commands -> exclusion update -> priority update
    -> experience accumulation -> output gate -> task selection -> motion
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .allocation import (NO_OBJECT, AllocationState, clear_delivered, gate_bits, resize,
                         select_task, update_exclusions, update_priorities)
from .experience import ExperienceLedger
from .nn import MlpParams, load_checkpoint
from .policy import (build_observation, neighbor_objects, policy_forward, random_policy,
                     scripted_commands)
from .world import KinematicsParams, add_robots, random_world, step_world, transporting

ABLATIONS = ("full", "no_de", "no_e")
WORKERS_ENV = "TRANSPORT_ALLOC_WORKERS"
TRACE_FORMAT = "transport_alloc.trace/1"


@dataclass
class ScenarioConfig:
    """One experiment row.

    ``weight_mix`` is a list of groups ``{"count": n, "weights": [...],
    "probs": [...]}``; a group with a single weight is fixed, otherwise each
    of its ``count`` objects draws a weight with the given probabilities.
    ``additions`` lists ``[time, count]`` pairs.
    """

    name: str
    n_initial: int
    weight_mix: list
    steps: int = 300
    episodes: int = 100
    seed: int = 0
    additions: list = field(default_factory=list)
    policy: str = "scripted"
    ablation: str = "full"
    k: int = 2
    kappa: float = 10.0
    k_phi: float = 0.2
    k_zeta: float = 0.2
    epsilon: float = 1.0
    stop_when_done: bool = True
    kinematics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ablation = self.ablation.replace("-", "_")
        self.validate()

    @property
    def m(self) -> int:
        return sum(int(g["count"]) for g in self.weight_mix)

    @property
    def params(self) -> KinematicsParams:
        return KinematicsParams(**self.kinematics)

    @property
    def max_robots(self) -> int:
        return self.n_initial + sum(int(c) for t, c in self.additions if t < self.steps)

    def validate(self) -> None:
        if self.n_initial < 1:
            raise ValueError("n_initial must be >= 1")
        if self.steps < 1 or self.episodes < 0:
            raise ValueError("steps must be >= 1 and episodes >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if not (self.policy in ("scripted", "random") or self.policy.startswith("checkpoint:")):
            raise ValueError(f"unknown policy source {self.policy!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for g in self.weight_mix:
            ws = list(g["weights"])
            if int(g["count"]) < 0 or not ws or min(ws) < 1:
                raise ValueError(f"bad weight group {g!r}")
            probs = g.get("probs")
            if probs is not None and (len(probs) != len(ws) or not np.isclose(sum(probs), 1.0)):
                raise ValueError(f"probabilities of {g!r} must match weights and sum to 1")
        if self.m < 1:
            raise ValueError("scenario needs at least one object")
        for t, c in self.additions:
            if not 0 <= t < self.steps or c < 1:
                raise ValueError(f"robot addition {(t, c)} outside the episode")
        self.params  # validates kinematics

    def resolve_weights(self, rng: np.random.Generator) -> list[int]:
        out = []
        for g in self.weight_mix:
            ws = [int(w) for w in g["weights"]]
            n = int(g["count"])
            if len(ws) == 1:
                out += ws * n
            else:
                out += [int(w) for w in rng.choice(ws, size=n, p=g.get("probs"))]
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**doc)


def _mix(*groups):
    return [dict(g) for g in groups]


def _heavy(count, light, heavy, p_heavy):
    if p_heavy <= 0:
        return {"count": count, "weights": [light]}
    if p_heavy >= 1:
        return {"count": count, "weights": [heavy]}
    return {"count": count, "weights": [light, heavy], "probs": [1 - p_heavy, p_heavy]}


def _presets() -> dict[str, ScenarioConfig]:
    out = {
        "training": ScenarioConfig(
            "training", 3, _mix({"count": 3, "weights": [4]}, _heavy(3, 1, 3, 0.5)), steps=300),
        "deadlock": ScenarioConfig(
            "deadlock", 3, _mix({"count": 1, "weights": [4]}, _heavy(5, 1, 3, 0.5)),
            steps=300, stop_when_done=False),
        "validation3": ScenarioConfig(
            "validation3", 3,
            _mix({"count": 1, "weights": [1]}, {"count": 4, "weights": [3]},
                 {"count": 5, "weights": [6]}),
            steps=2000, additions=[[1000, 3]]),
        "tiny": ScenarioConfig("tiny", 2, _mix({"count": 2, "weights": [1]}), steps=100),
    }
    for tag, p in (("p0", 0.0), ("p50", 0.5), ("p100", 1.0)):
        out[f"validation1-{tag}"] = ScenarioConfig(
            f"validation1-{tag}", 6, _mix({"count": 2, "weights": [7]}, _heavy(8, 1, 3, p)),
            steps=1000)
        out[f"validation2-{tag}"] = ScenarioConfig(
            f"validation2-{tag}", 6, _mix({"count": 2, "weights": [7]}, _heavy(8, 1, 6, p)),
            steps=1000)
    out["validation1"] = replace(out["validation1-p50"], name="validation1")
    out["validation2"] = replace(out["validation2-p50"], name="validation2")
    return out


PRESETS = _presets()


def get_scenario(name_or_path: str) -> ScenarioConfig:
    """A preset by name, or a JSON scenario file."""
    if name_or_path in PRESETS:
        return replace(PRESETS[name_or_path])
    path = Path(name_or_path)
    if path.exists():
        return ScenarioConfig.from_dict(json.loads(path.read_text()))
    raise ValueError(f"unknown scenario {name_or_path!r}; presets: {sorted(PRESETS)}")


# -- policies ---------------------------------------------------------------

def network_policy(actors: list[MlpParams]) -> Callable:
    """Robot i uses ``actors[i % len(actors)]``."""
    def act(ep: "Episode", e_obs):
        out = []
        for i in range(ep.world.robot_pos.shape[0]):
            obs = build_observation(ep.world, ep.state, e_obs, i, ep.scenario.k)
            out.append(policy_forward(actors[i % len(actors)], obs))
        return out
    return act


def scripted_source(ep: "Episode", e_obs):
    return scripted_commands(ep.world, ep.state, e_obs, ep.scenario.k, links=ep.links)


def random_source(ep: "Episode", e_obs):
    k = ep.scenario.k
    return [random_policy(ep.seed, i, ep.step_index, neighbor_objects(ep.world, i, k))
            for i in range(ep.world.robot_pos.shape[0])]


def policy_from_spec(spec: str) -> Callable:
    if spec == "scripted":
        return scripted_source
    if spec == "random":
        return random_source
    if spec.startswith("checkpoint:"):
        return network_policy(load_checkpoint(spec.split(":", 1)[1]))
    raise ValueError(f"unknown policy source {spec!r}")


# -- episodes ---------------------------------------------------------------

@dataclass
class EpisodeResult:
    seed: int
    success: bool
    transport_time: Optional[float]
    steps: int
    feasible: list
    delivered_at: dict
    trace: list
    events: list


class Episode:
    """Mutable simulation of one episode; ``step`` advances one sampling period."""

    def __init__(self, scenario: ScenarioConfig, seed: int, policy: Callable | None = None,
                 record: bool = False):
        self.scenario = scenario
        self.seed = int(seed)
        self.policy = policy or policy_from_spec(scenario.policy)
        self.record = record
        weights = scenario.resolve_weights(np.random.default_rng([self.seed, 1]))
        self.world = random_world(scenario.n_initial, weights, [self.seed, 0], scenario.params)
        m = self.world.n_objects
        self.state = AllocationState.zeros(scenario.n_initial, m, k_phi=scenario.k_phi,
                                           k_zeta=scenario.k_zeta, epsilon=scenario.epsilon)
        self.ledger = ExperienceLedger(m, scenario.n_initial, scenario.kappa)
        self.step_index = 0
        self.feasible = np.flatnonzero(self.world.obj_weight <= scenario.max_robots)
        self.delivered_at: dict[int, float] = {}
        self.trace: list[dict] = []
        self.events: list[dict] = []
        self.gate = np.zeros((scenario.n_initial, m), dtype=bool)
        self.commands = []
        self.links = None
        self.done = False

    @property
    def success(self) -> bool:
        return bool(np.all(self.world.obj_delivered[self.feasible]))

    def _add_robots(self, count: int) -> None:
        e_before = self.ledger.values()
        self.world = add_robots(self.world, count, [self.seed, 2, self.step_index])
        n = self.world.robot_pos.shape[0]
        self.state = resize(self.state, n, self.world.n_objects)
        self.gate = np.vstack([self.gate, np.zeros((count, self.world.n_objects), dtype=bool)])
        self.ledger.set_robot_count(self.world.n_robots)
        self.events.append({"event": "add_robots", "t": self.world.time, "count": count,
                            "n_robots": self.world.n_robots,
                            "E_before": e_before.tolist(),
                            "E_after": self.ledger.values().tolist()})

    def step(self, commands=None) -> None:
        sc = self.scenario
        dt = sc.params.dt
        for t, c in sc.additions:
            if t == self.step_index:
                self._add_robots(int(c))
        world = self.world
        e = self.ledger.values()
        e_obs = np.zeros_like(e) if sc.ablation == "no_e" else e
        links, _, movable = transporting(world)
        self.links = links
        self.state.frozen = (links >= 0) & movable[np.maximum(links, 0)]
        cmds = commands if commands is not None else self.policy(self, e_obs)
        self.commands = cmds

        state = self.state
        if sc.ablation != "no_de":
            state = update_exclusions(state, cmds, dt)
        state = update_priorities(state, cmds, dt)
        state = clear_delivered(state, world)

        self.ledger.accumulate(world, dt, links)
        e = self.ledger.values()
        use_gate = sc.ablation != "no_de"
        self.gate = gate_bits(state, e) if use_gate else np.zeros_like(state.phi, dtype=bool)

        targets = []
        for i in range(world.robot_pos.shape[0]):
            if state.frozen[i]:
                targets.append(int(links[i]))
            else:
                targets.append(select_task(state, i, world, e, use_gate=use_gate, links=links))
        state.target = np.array([NO_OBJECT if t is None else t for t in targets], dtype=int)
        self.state = state
        self.world = step_world(world, targets, links)
        self.step_index += 1

        for l in np.flatnonzero(self.world.obj_delivered & ~world.obj_delivered):
            self.delivered_at[int(l)] = self.world.time
        if self.record:
            self.trace.append(self._record(e))
        pending = any(t >= self.step_index for t, _ in sc.additions)
        if self.step_index >= sc.steps or (sc.stop_when_done and self.success and not pending):
            self.done = True

    def _record(self, e) -> dict:
        w, s = self.world, self.state
        links, counts, _ = transporting(w)
        phi_hat = np.where(self.gate, 0.0, s.phi)
        return {
            "t": w.time,
            "robot_pos": w.robot_pos.tolist(),
            "robot_target": [None if t < 0 else int(t) for t in s.target],
            "object_pos": w.obj_pos.tolist(),
            "object_vel": w.obj_vel.tolist(),
            "delivered": w.obj_delivered.tolist(),
            "connected": counts.tolist(),
            "E": list(map(float, e)),
            "gate": self.gate.astype(int).tolist(),
            "phi": s.phi.tolist(),
            "phi_hat": phi_hat.tolist(),
            "zeta": s.zeta.tolist(),
        }

    def run(self) -> EpisodeResult:
        while not self.done:
            self.step()
        return self.result()

    def result(self) -> EpisodeResult:
        ok = self.success
        t_done = max((self.delivered_at[int(l)] for l in self.feasible), default=0.0) if ok else None
        return EpisodeResult(self.seed, ok, t_done, self.step_index, self.feasible.tolist(),
                             dict(self.delivered_at), self.trace, self.events)


def run_episode(scenario: ScenarioConfig, seed: int, policy: Callable | None = None,
                record: bool = True) -> EpisodeResult:
    return Episode(scenario, seed, policy, record).run()


@dataclass
class MetricsReport:
    scenario: str
    success_rate: float
    transportation_time: Optional[float]
    outcomes: list

    @property
    def episodes(self) -> int:
        return len(self.outcomes)


def _episode_job(args):
    scenario, seed, record = args
    res = run_episode(scenario, seed, record=record)
    return res


def max_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def episode_seeds(scenario: ScenarioConfig) -> list[int]:
    return [scenario.seed + i for i in range(scenario.episodes)]


def run_batch(scenario: ScenarioConfig, record_first: bool = False,
              workers: int | None = None) -> tuple[MetricsReport, list[EpisodeResult]]:
    """Run ``scenario.episodes`` episodes with seeds ``seed, seed+1, ...``.

    Episodes are independent and may run in worker processes; results are
    always aggregated in seed order.
    """
    if scenario.episodes < 1:
        raise ValueError("episode count must be >= 1")
    jobs = [(scenario, s, record_first and k == 0) for k, s in enumerate(episode_seeds(scenario))]
    workers = workers or max_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]
    return summarize(scenario.name, results), results


def summarize(name: str, results: list[EpisodeResult]) -> MetricsReport:
    wins = [r for r in results if r.success]
    rate = len(wins) / len(results) if results else 0.0
    ttime = float(np.mean([r.transport_time for r in wins])) if wins else None
    outcomes = [{"episode": k, "seed": r.seed, "success": r.success,
                 "transport_time": r.transport_time, "steps": r.steps,
                 "feasible": len(r.feasible),
                 "delivered": len(r.delivered_at)} for k, r in enumerate(results)]
    return MetricsReport(name, rate, ttime, outcomes)


# -- emission ---------------------------------------------------------------

OUTCOME_FIELDS = ["episode", "seed", "success", "transport_time", "steps", "feasible", "delivered"]
SUMMARY_FIELDS = ["scenario", "episodes", "success_rate", "transportation_time"]


def emit_trace(result: EpisodeResult | None, path) -> Path:
    """JSONL: a header line, one line per robot-addition event, one line per step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        header = {"type": "header", "format": TRACE_FORMAT,
                  "seed": None if result is None else result.seed}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        if result is not None:
            events = sorted(result.events, key=lambda ev: ev["t"])
            rows = [dict(type="event", **ev) for ev in events] + \
                   [dict(type="step", **rec) for rec in result.trace]
            rows.sort(key=lambda r: (r["t"], r["type"] == "step"))
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_metrics(report: MetricsReport, directory) -> tuple[Path, Path]:
    """Write ``episodes.csv`` (one row per episode) and ``summary.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ep_path = directory / "episodes.csv"
    with ep_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_FIELDS)
        for row in report.outcomes:
            w.writerow([_fmt(row[f]) for f in OUTCOME_FIELDS])
    sum_path = directory / "summary.csv"
    with sum_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        if report.outcomes:
            w.writerow([report.scenario, report.episodes, _fmt(report.success_rate),
                        _fmt(report.transportation_time)])
    return ep_path, sum_path


def emit(obj, path):
    """Dispatch on type: traces go to JSONL files, reports to a CSV directory."""
    if isinstance(obj, MetricsReport):
        return emit_metrics(obj, path)
    if obj is None or isinstance(obj, EpisodeResult):
        return emit_trace(obj, path)
    raise TypeError(f"cannot emit {type(obj).__name__}")
