"""Acceptance suite: one test per criterion, each with its runtime budget.

A summary line per criterion is printed at the end of the pytest run.
"""
import itertools
import json
import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from gradcheck import max_error_over_nets
from transport_alloc.allocation import AllocationState, PolicyCommand, gate, gate_bits, \
    update_exclusions, update_priorities
from transport_alloc.experience import ExperienceLedger
from transport_alloc.harness import PRESETS, Episode, run_batch
from transport_alloc.learning import TrainConfig, random_rewards, train
from transport_alloc.world import transporting


def criterion(number, title):
    return pytest.mark.criterion(number, title)


class Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0


@criterion(1, "gate algebra")
def test_gate_algebra(record_property):
    clk = Clock()
    eps = 1.0
    phi = 0.8
    for zeta, e in itertools.product([0.2, 0.7], [0.3, 1.6]):
        s = AllocationState(np.array([[phi]]), np.array([[zeta]]), epsilon=eps)
        closed = zeta >= 0.5 and e >= eps
        assert gate(s, 0, [e])[0] == (0.0 if closed else phi)
    rng = np.random.default_rng(0)
    phis = rng.uniform(0, 1, 1000)
    zetas = rng.uniform(0, 1, 1000)
    es = rng.uniform(0, 2 * eps, 1000)
    s = AllocationState(phis[None, :], zetas[None, :], epsilon=eps)
    out = gate(s, 0, es)
    closed = (zetas >= 0.5) & (es >= eps)
    assert np.all((out == 0) | (out == phis))
    np.testing.assert_array_equal(out, np.where(closed, 0.0, phis))
    np.testing.assert_array_equal(gate_bits(s, es)[0], closed)
    record_property("detail", f"4 quadrants + 1000 triples, {closed.sum()} closed, {clk.elapsed:.3f}s")
    assert clk.elapsed < 1.0


@criterion(2, "experience rescaling")
def test_experience_rescaling(record_property):
    clk = Clock()
    led = ExperienceLedger(1, 3, kappa=10)
    led.raw[0] = 5.0 * 3.0 ** 10
    assert led.query(0) == 5.0
    state = AllocationState(np.array([[0.9]]), np.array([[1.0]]), epsilon=1.0)
    assert gate(state, 0, led.values())[0] == 0.0
    led.set_robot_count(6)
    e = led.query(0)
    assert abs(e - 5.0 / 1024) / (5.0 / 1024) < 1e-12
    assert e < state.epsilon
    assert gate(state, 0, led.values())[0] == 0.9
    record_property("detail", f"E 5.0 -> {e:.6e}, gate reopened, {clk.elapsed:.3f}s")
    assert clk.elapsed < 1.0


@criterion(3, "consensus convergence")
def test_consensus_convergence(record_property):
    clk = Clock()
    rng = np.random.default_rng(3)
    worst_steps = 0
    for _ in range(100):
        zeta0 = rng.uniform(0, 1, (3, 1))
        s = AllocationState(rng.uniform(0, 1, (3, 1)), zeta0.copy())
        target = zeta0.max()
        for k in range(1, 201):
            cmds = [PolicyCommand([0.0], 0, [s.zeta[i, 0]], 1.0, (0,)) for i in range(3)]
            s = update_exclusions(s, cmds, 1.0)
            if np.all(np.abs(s.zeta - target) < 1e-6):
                worst_steps = max(worst_steps, k)
                break
        else:
            pytest.fail(f"exclusion not within 1e-6 of {target} after 200 steps: {s.zeta.ravel()}")
        c = rng.uniform(0, 1)
        p = AllocationState(rng.uniform(0, 1, (3, 1)), np.zeros((3, 1)))
        spread = np.ptp(p.phi)
        for _ in range(200):
            p = update_priorities(p, [PolicyCommand([c], 1.0, [0.0], 0, (0,))] * 3, 1.0)
            now = np.ptp(p.phi)
            assert now <= spread + 1e-15
            spread = now
    record_property("detail", f"100 inits, exclusion settled within {worst_steps} steps, {clk.elapsed:.2f}s")
    assert clk.elapsed < 5.0


def _deadlock_batch(sc):
    """Run a batch episode by episode, tracking the heavy object's gate and attachments."""
    out = []
    for seed in range(sc.seed, sc.seed + sc.episodes):
        ep = Episode(sc, seed)
        heavy = np.flatnonzero(ep.world.obj_weight > sc.max_robots)
        closed_all = np.zeros(len(heavy), dtype=bool)
        while not ep.done:
            ep.step()
            closed_all |= ep.gate[:, heavy].all(axis=0)
        links = transporting(ep.world)[0]
        on_heavy = np.isin(links, heavy)
        # attached robots that are still allocated to the object (gate open for them)
        stuck = [i for i in np.flatnonzero(on_heavy) if not ep.gate[i, links[i]]]
        out.append({"seed": seed, "success": ep.success, "gate_closed": bool(closed_all.all()),
                    "touching": bool(on_heavy.any()), "stuck": stuck})
    return out


@pytest.fixture(scope="module")
def deadlock_full():
    clk = Clock()
    rows = _deadlock_batch(PRESETS["deadlock"])
    return rows, clk.elapsed


@criterion(4, "deadlock avoidance")
def test_deadlock_avoidance(deadlock_full, record_property):
    rows, elapsed = deadlock_full
    assert len(rows) == 100
    wins = sum(r["success"] for r in rows)
    closed = sum(r["gate_closed"] for r in rows)
    stuck = [r["seed"] for r in rows if r["stuck"]]
    touching = [r["seed"] for r in rows if r["touching"]]
    record_property("detail", f"success {wins}/100, gate closed for all robots in {closed}/100, "
                              f"still allocated at end in {len(stuck)}/100, within reach but released "
                              f"in {len(touching) - len(stuck)}/100 (seeds {touching}), {elapsed:.1f}s")
    assert wins >= 95
    assert closed == 100
    assert not stuck
    assert elapsed < 30.0


@criterion(5, "validation-3 exclusion release")
def test_validation3(record_property):
    clk = Clock()
    sc = PRESETS["validation3"]
    report, results = run_batch(sc, workers=1)
    add_t = sc.additions[0][0] * sc.params.dt
    all_done = 0
    for res in results:
        weights = Episode(sc, res.seed).world.obj_weight
        six = np.flatnonzero(weights == 6)
        for l in six:
            assert res.delivered_at.get(int(l), math.inf) > add_t
        all_done += len(res.delivered_at) == len(weights)
        ev = res.events[0]
        before = np.array(ev["E_before"])[six]
        after = np.array(ev["E_after"])[six]
        np.testing.assert_allclose(after * 1024, before, rtol=1e-12, atol=0)
        assert np.all(before > 0)
    record_property("detail", f"all 10 delivered in {all_done}/100, weight-6 only after t={add_t:.0f}, "
                              f"E ratio 1024 at addition, {clk.elapsed:.1f}s")
    assert all_done >= 90
    assert clk.elapsed < 120.0


@criterion(6, "ablation contrast")
def test_ablation_contrast(deadlock_full, record_property):
    rows, _ = deadlock_full
    full = sum(r["success"] for r in rows) / len(rows)
    report, _ = run_batch(replace(PRESETS["deadlock"], ablation="no_de"), workers=1)
    record_property("detail", f"success full {full:.2f} vs no-de {report.success_rate:.2f}")
    assert report.success_rate < full


@criterion(7, "gradient correctness")
def test_gradients(record_property):
    clk = Clock()
    worst = max_error_over_nets(100, seed=7)
    record_property("detail", f"max relative error {worst:.2e} over 100 nets, {clk.elapsed:.1f}s")
    assert worst < 1e-4
    assert clk.elapsed < 30.0


@criterion(8, "learning smoke")
def test_learning_smoke(record_property):
    clk = Clock()
    sc = PRESETS["tiny"]
    res = train(TrainConfig(episodes=500, seed=0), sc)
    trained = np.array([c["mean"] for c in res.curve[-50:]])
    base = random_rewards(sc, 500, seed=100_000)
    se = math.sqrt(trained.var(ddof=1) / len(trained) + base.var(ddof=1) / len(base))
    margin = (trained.mean() - base.mean()) / se
    record_property("detail", f"trained {trained.mean():.3f} vs random {base.mean():.3f}, "
                              f"margin {margin:.1f} SE, {clk.elapsed:.0f}s")
    assert margin > 2.0
    assert clk.elapsed < 15 * 60


@criterion(9, "determinism")
def test_cli_determinism(tmp_path, record_property):
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"scenario": "tiny", "episodes": 4, "steps_per_episode": 40,
                               "batch_size": 16, "hidden": 16, "seed": 3}))
    runs = [["run", "--scenario", "deadlock", "--episodes", "3", "--seed", "11", "--ablation", "no-e"],
            ["run", "--scenario", "tiny", "--episodes", "3", "--seed", "2", "--policy", "random"],
            ["train", "--config", str(cfg)]]
    checked = 0
    for k, args in enumerate(runs):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{k}{rep}"
            subprocess.run([sys.executable, "-m", "transport_alloc", *args, "--out", str(out)],
                           check=True, capture_output=True)
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        for name in names:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
            checked += 1
    record_property("detail", f"{checked} files byte-identical across repeated CLI runs")
