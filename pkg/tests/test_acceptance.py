"""Acceptance checks, one test per criterion.

Every test records a single ``[PASS]``/``[FAIL]`` line; the lines are printed
together at the end of the pytest run (see ``conftest.py``). Run this file
directly for just the acceptance block:

    python3 tests/test_acceptance.py
"""

import json
import random
import subprocess
import sys
import threading
import time

import numpy as np

import conftest
from conftest import CONFIGS
from oracles import HARNESS_TABLE, hand_cycles, matrix_front

from nas_forge.analyzer import parse_shapes_doc, run_block_sweep
from nas_forge.core_ir import (
    OpKind, PrimitiveOp, TensorShape, conv2d, conv_output_shape, count_act_bytes, count_macs, count_params,
    decompose_gc, depthwise, group_conv,
)
from nas_forge.cost_model import default_config, harness_energy, metrics_to_dict, model_metrics, op_energy, op_latency
from nas_forge.pareto import ParetoArchive, ParetoPoint
from nas_forge.ppe_service import PpeClient, PpeServer
from nas_forge.ref_exec import exec_graph, exec_op, gen_random_tensor, partition_gc_weights, random_values
from nas_forge.search_engine import (
    InProcessEvaluator, Objective, exhaustive_search, quality_proxy, reward, run_evolution,
)
from nas_forge.search_space import enumerate_space, load_space, materialize, sample_random, space_size

# Pinned thresholds.
AC1_CASES, AC1_SECONDS = 200, 5.0
AC2_CASES, AC2_SECONDS, AC2_TOL = 100, 60.0, 1e-9
AC3_MAC_RATIO, AC3_LATENCY_RATIO = 6.0, 0.5
AC4_PARAM_RATIO, AC4_LATENCY_BAND, AC4_LATENCY_TIGHT = 2.5, 0.6, 0.55
AC5_POINTS, AC5_SEEDS = 1000, 50
AC6_MAX_SPACE, AC6_BUDGET, AC6_P, AC6_S, AC6_SEEDS, AC6_NEEDED, AC6_SECONDS = 512, 300, 32, 8, 20, 18, 120.0
AC7_CLIENTS, AC7_REQUESTS = 32, 100

CFG = default_config()


def record(tag, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _counts(op):
    return count_params(op), count_macs(op), count_act_bytes(op)


# -- 1 ------------------------------------------------------------------------------------------


def test_ac1_degenerate_identities():
    rng = random.Random(1)

    def run():
        bad = []
        for i in range(AC1_CASES):
            h, w = rng.randint(1, 32), rng.randint(1, 32)
            cin, cout = rng.randint(1, 256), rng.randint(1, 256)
            k, s = rng.choice([1, 3, 5, 7]), rng.choice([1, 2])
            shape = TensorShape(h, w, cin)
            gc1 = PrimitiveOp(OpKind.GROUP_CONV, shape, conv_output_shape(shape, k, s, cout), k, s, groups=1)
            if _counts(gc1) != _counts(conv2d(shape, cout, k, s)):
                bad.append(("g=1", i))
            gcc = PrimitiveOp(OpKind.GROUP_CONV, shape, conv_output_shape(shape, k, s, cin), k, s, groups=cin)
            if _counts(gcc) != _counts(depthwise(shape, k, s)):
                bad.append(("g=c", i))
        return bad

    bad, dt = _timed(run)
    record("AC1 degenerate identities", not bad and dt < AC1_SECONDS,
           f"{AC1_CASES} shapes x 2 identities, {len(bad)} mismatches, {dt:.2f} s (limit {AC1_SECONDS:g} s)")


# -- 2 ------------------------------------------------------------------------------------------


def test_ac2_gc_decomposition_oracle():
    rng = random.Random(2)

    def run():
        worst, n = 0.0, 0
        while n < AC2_CASES:
            g = rng.choice([2, 4, 8, 16])
            cin, cout = g * rng.randint(1, 64 // g), g * rng.randint(1, 64 // g)
            h, w, k, s = rng.randint(1, 8), rng.randint(1, 8), rng.choice([1, 3, 5]), rng.choice([1, 2])
            op = group_conv(TensorShape(h, w, cin), cout, k, s, g)
            x = gen_random_tensor(op.in_shape, rng.getrandbits(32))
            wt = random_values(count_params(op), rng.getrandbits(32))
            dec = decompose_gc(op)
            direct = exec_op(op, x, wt).data
            via = exec_graph(dec, x, partition_gc_weights(op, wt, dec)).data
            worst = max(worst, float(np.max(np.abs(direct - via))))
            n += 1
        return worst

    worst, dt = _timed(run)
    record("AC2 group conv = slice/conv/concat", worst <= AC2_TOL and dt < AC2_SECONDS,
           f"{AC2_CASES} shapes, max |diff| {worst:.3g} (tol {AC2_TOL:g}), {dt:.2f} s (limit {AC2_SECONDS:g} s)")


# -- 3 ------------------------------------------------------------------------------------------


def test_ac3_calibration_pair():
    doc = json.loads((CONFIGS / "calibration_pair.json").read_text())
    fc, dw = doc["full_conv"], doc["depthwise"]
    full = conv2d(TensorShape(doc["h"], doc["w"], fc["in_c"]), fc["out_c"], fc["k"])
    dep = depthwise(TensorShape(doc["h"], doc["w"], dw["c"]), dw["k"])
    a, b = op_latency(full, CFG), op_latency(dep, CFG)
    # the cost model agrees with the integer roofline oracle on both ops
    oracle_ok = all(
        m.cycles == hand_cycles(count_macs(op), count_act_bytes(op)[0], count_params(op), q)
        for op, m, q in ((full, a, fc["out_c"]), (dep, b, 1))
    )
    mac_ratio = a.macs / b.macs
    lat_ratio = a.cycles / b.cycles
    ok = oracle_ok and mac_ratio >= AC3_MAC_RATIO and lat_ratio <= AC3_LATENCY_RATIO
    record("AC3 calibration pair", ok,
           f"full {fc['in_c']}->{fc['out_c']} vs depthwise {dw['c']} at {doc['h']}x{doc['w']}: "
           f"MAC ratio {mac_ratio:.2f} (>= {AC3_MAC_RATIO:g}), latency ratio {lat_ratio:.3f} "
           f"(<= {AC3_LATENCY_RATIO:g}), oracle {'agrees' if oracle_ok else 'DISAGREES'}")


# -- 4 ------------------------------------------------------------------------------------------


def test_ac4_sweep_direction():
    _, menu, _ = parse_shapes_doc(json.loads((CONFIGS / "sweep_shapes.json").read_text()))
    shapes = [TensorShape(14, 14, 64), TensorShape(14, 14, 160)]
    table = run_block_sweep(shapes, menu, CFG)
    parts, ok = [], True
    for s in shapes:
        gc = [r for r in table if r.shape == (s.h, s.w, s.c) and r.g is not None and r.g > 1]
        band = [r for r in gc if r.param_ratio >= AC4_PARAM_RATIO and r.latency_ratio <= AC4_LATENCY_BAND]
        tight = [r for r in gc if r.latency_ratio <= AC4_LATENCY_TIGHT]
        ok = ok and bool(band) and bool(tight)
        if band:
            r = min(band, key=lambda r: r.latency_ratio)
            parts.append(f"{s.h}x{s.w}x{s.c}: {r.variant} k={r.k} m={r.m} g={r.g} params x{r.param_ratio:.2f} "
                         f"latency x{r.latency_ratio:.3f}, {len(tight)} rows <= {AC4_LATENCY_TIGHT:g}")
        else:
            parts.append(f"{s.h}x{s.w}x{s.c}: no row with params >= {AC4_PARAM_RATIO:g}x and latency <= "
                         f"{AC4_LATENCY_BAND:g}x")
    record("AC4 sweep direction", ok, "; ".join(parts))


# -- 5 ------------------------------------------------------------------------------------------


def test_ac5_pareto_correctness():
    bad = []
    for seed in range(AC5_SEEDS):
        rng = random.Random(seed)
        # a coarse grid on half the seeds forces ties and duplicates
        if seed % 2:
            pts = [(float(rng.randint(0, 40)), float(rng.randint(0, 40))) for _ in range(AC5_POINTS)]
        else:
            pts = [(rng.uniform(0, 100), rng.uniform(0, 1000)) for _ in range(AC5_POINTS)]
        arch = ParetoArchive()
        for q, lat in pts:
            arch.insert(ParetoPoint(q, lat))
        if arch.objective_set() != matrix_front(pts) or len(arch) != len(arch.objective_set()):
            bad.append(seed)
    record("AC5 pareto archive", not bad,
           f"{AC5_SEEDS} seeds x {AC5_POINTS} points, {len(bad)} seeds disagree with the brute-force front")


# -- 6 ------------------------------------------------------------------------------------------


def test_ac6_search_sanity():
    space = load_space(CONFIGS / "tiny_space.json")
    obj = Objective(100.0, -0.5)
    ev = InProcessEvaluator(CFG)

    def run():
        best = exhaustive_search(space, obj, ev)
        rewards = sorted((_reward(space, c, obj, ev) for c in enumerate_space(space)), reverse=True)
        unique = rewards[0] > rewards[1]
        hits = 0
        for seed in range(AC6_SEEDS):
            res = run_evolution(space, AC6_BUDGET, AC6_P, AC6_S, obj, ev, seed=seed)
            hits += res.best.candidate == best.candidate
        return best, unique, hits

    (best, unique, hits), dt = _timed(run)
    n = space_size(space)
    ok = n <= AC6_MAX_SPACE and unique and hits >= AC6_NEEDED and dt < AC6_SECONDS
    record("AC6 search sanity", ok,
           f"{n} candidates, optimum reward {best.reward:.6g} ({'unique' if unique else 'TIED'}), evolution "
           f"hit it in {hits}/{AC6_SEEDS} seeds (need {AC6_NEEDED}), {dt:.1f} s (limit {AC6_SECONDS:g} s)")


def _reward(space, cand, obj, ev):
    model = materialize(cand, space)
    m = ev(model)
    return reward(quality_proxy(model, m), m.latency_us, obj)


# -- 7 ------------------------------------------------------------------------------------------


def test_ac7_service_transparency():
    space = load_space(CONFIGS / "classification_space.json")
    rng = random.Random(7)
    models = [materialize(sample_random(space, rng.getrandbits(64)), space) for _ in range(64)]
    expected = [metrics_to_dict(model_metrics(m, CFG), per_op=False) for m in models]
    mismatched, lost, wrong_id = [], [], []
    seen_ids = []
    lock = threading.Lock()

    def client(cid, address):
        with PpeClient(*address, timeout=120) as c:
            futs = []
            for i in range(AC7_REQUESTS):
                j = (cid * 7 + i) % len(models)
                futs.append((j, c.submit(models[j])))
            for j, fut in futs:
                try:
                    resp = fut.result(timeout=120)
                except Exception as exc:  # noqa: BLE001 - counted as dropped
                    with lock:
                        lost.append((cid, repr(exc)))
                    continue
                with lock:
                    seen_ids.append((cid, resp.request_id))
                    if resp.request_id != fut.request_id:
                        wrong_id.append((cid, fut.request_id, resp.request_id))
                    if not resp.ok or resp.metrics != expected[j]:
                        mismatched.append((cid, j))

    with PpeServer(max_concurrent=8, config=CFG) as server:
        threads = [threading.Thread(target=client, args=(c, server.address)) for c in range(AC7_CLIENTS)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    total = AC7_CLIENTS * AC7_REQUESTS
    dup = len(seen_ids) - len(set(seen_ids))
    ok = not (mismatched or lost or wrong_id or dup) and len(seen_ids) == total
    record("AC7 service transparency", ok,
           f"{AC7_CLIENTS} clients x {AC7_REQUESTS} requests: {len(seen_ids)}/{total} answered, "
           f"{len(mismatched)} metric mismatches, {len(wrong_id) + dup} cross-matched ids, {len(lost)} dropped")


# -- 8 ------------------------------------------------------------------------------------------


def test_ac8_energy_harness():
    table_bad = [row for row in HARNESS_TABLE if harness_energy(*row[:3]) != row[3]]
    rng = random.Random(8)
    mono_bad = 0
    for _ in range(2000):
        counts = [rng.randint(0, 10**9) for _ in range(3)]
        base = op_energy(*counts, CFG)
        for i in range(3):
            bumped = list(counts)
            bumped[i] += rng.randint(1, 10**6)
            mono_bad += not op_energy(*bumped, CFG) > base
    record("AC8 energy harness", not table_bad and not mono_bad,
           f"{len(HARNESS_TABLE) - len(table_bad)}/{len(HARNESS_TABLE)} tabulated triples exact, "
           f"{mono_bad} monotonicity violations in 6000 bumps")


# -- 9 ------------------------------------------------------------------------------------------

OUTPUTS = ("trials.jsonl", "trials.csv", "trials.svg", "front.csv", "front.svg", "best.json")


def test_ac9_cli_determinism(tmp_path):
    argv = [sys.executable, "-m", "nas_forge", "search", "--space", str(CONFIGS / "tiny_space.json"),
            "--algo", "evolution", "--budget", "120", "--population", "16", "--sample", "4",
            "--target-us", "100", "--seed", "11"]
    for run in ("a", "b"):
        proc = subprocess.run(argv + ["--out", str(tmp_path / run)], capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
    differ = [f for f in OUTPUTS if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    record("AC9 determinism", not differ,
           f"two serial CLI searches, {len(OUTPUTS) - len(differ)}/{len(OUTPUTS)} output files byte-identical"
           + (f" (differ: {', '.join(differ)})" if differ else ""))


if __name__ == "__main__":
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", __file__, "-q"]))
