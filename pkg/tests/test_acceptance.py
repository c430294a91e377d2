"""Acceptance criteria 1-8.

Each test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria".  The scenario runs are shared module fixtures;
the whole file takes several minutes on one core.
"""
import random
from dataclasses import replace

import pytest

import econ_oracle
from acceptance_log import record
from helpers import Owner
from mofbc.chain import Chain
from mofbc.gv import GvProof, KeyPair
from mofbc.memopt import build_summary, make_aged, make_remove, validate_aged, validate_remove, validate_summary
from mofbc.sim import FIG9_12_CPS, preset, run, summarize


@pytest.fixture(scope="module")
def default_run():
    return run(replace(preset("default"), audit=True))


@pytest.fixture(scope="module")
def baseline_run():
    return run(preset("default").all_permanent())


@pytest.fixture(scope="module")
def fig8_run():
    res = run(replace(preset("fig8"), audit=True))
    return res, summarize(res)


@pytest.fixture(scope="module")
def trend_runs():
    return {cp: run(replace(preset("fig9-12", cp_weeks=cp), audit=True)) for cp in FIG9_12_CPS}


def test_criterion_1_memory_reduction(default_run, baseline_run):
    size, base = default_run.final_size(), baseline_run.final_size()
    pct = 100 * (base - size) / base
    ok = 15 <= pct <= 30
    record(1, ok, f"final size {size} vs all-permanent {base} bytes: {pct:.2f}% smaller (band 15-30%)")
    assert ok


def test_criterion_2_benefit_cost(fig8_run):
    _, summary = fig8_run
    ratios = {g: summary["benefit_cost"][g]["ratio"] for g in ("temporary", "summarizable")}
    ok = all(r >= 100 for r in ratios.values())
    record(2, ok, "benefit/cost " + ", ".join(f"{g} {r:.0f}" for g, r in ratios.items()) + " (need >= 100)")
    assert ok


def test_criterion_3_fee_and_size_ordering(fig8_run):
    res, _ = fig8_run
    fees = {g: n.out_of_pocket_total for g, n in res.networks.items()}
    sizes = {g: n.chain.size_bytes for g, n in res.networks.items()}
    fee_ok = fees["summarizable"] < fees["temporary"] < fees["permanent"]
    size_ok = sizes["temporary"] < sizes["summarizable"] < sizes["permanent"]
    record(3, fee_ok and size_ok,
           f"fees summ {fees['summarizable']:.6f} < temp {fees['temporary']:.6f} < perm {fees['permanent']:.6f}; "
           f"sizes temp {sizes['temporary']} < summ {sizes['summarizable']} < perm {sizes['permanent']}")
    assert fee_ok and size_ok


def trend_point(res):
    frames = res.frames
    mined = frames[-1].user_tx_mined
    return {
        "peak_size": max(f.bc_size_bytes for f in frames),
        "throughput": mined / len(frames),
        "blocks_per_10k": frames[-1].block_count * 10_000 / mined,
        "peak_wasted": max(f.wasted_memory_bytes for f in frames),
    }


def test_criterion_4_cp_trends(trend_runs):
    pts = [trend_point(trend_runs[cp]) for cp in FIG9_12_CPS]

    def rising(key):
        return all(a[key] < b[key] for a, b in zip(pts, pts[1:]))

    def falling(key):
        return all(a[key] > b[key] for a, b in zip(pts, pts[1:]))

    checks = {
        "peak size up": rising("peak_size"),
        "throughput up": rising("throughput"),
        "blocks/10k down": falling("blocks_per_10k"),
        "peak wasted up": rising("peak_wasted"),
    }
    detail = "; ".join(
        f"CP {cp}: peak {p['peak_size']}, {p['throughput']:.2f} tx/wk, "
        f"{p['blocks_per_10k']:.2f} blk/10k, wasted {p['peak_wasted']}"
        for cp, p in zip(FIG9_12_CPS, pts))
    failed = [k for k, v in checks.items() if not v]
    record(4, not failed, (f"failed: {failed}; " if failed else "4/4 trends hold; ") + detail)
    assert not failed


def test_criterion_5_redaction_invariants(default_run, fig8_run, trend_runs):
    results = [default_run, fig8_run[0], *trend_runs.values()]
    reports = [r for res in results for r in res.cp_reports()]
    mismatches = sum(r.block_id_mismatches for r in reports)
    failed = sum(r.proofs_failed for r in reports)
    unsafe = sum(r.unsafe_removals for r in reports)
    rechecked = sum(r.blocks_rechecked for r in reports)
    proofs = sum(r.proofs_checked for r in reports)
    problems = [p for res in results for n in res.networks.values() for p in n.chain.verify()]
    ok = mismatches == failed == unsafe == 0 and not problems and rechecked > 0 and proofs > 0
    record(5, ok, f"{len(reports)} cleaning passes: {rechecked} block re-checks, {mismatches} id mismatches; "
                  f"{proofs} membership proofs, {failed} failed; {unsafe} unsafe removals; "
                  f"{len(problems)} final verify problems")
    assert ok


def forge_world(n_users=500, n_providers=120):
    chain = Chain(10)
    users = [Owner(f"adv-u{i}") for i in range(n_users)]
    providers = [Owner(f"adv-p{i}", simo=True) for i in range(n_providers)]
    records = []
    for o in users + providers:
        records += [o.tx(0, payload=b"v" * 40), o.tx(0, payload=b"w" * 40)]
    for i in range(0, len(records), 10):
        chain.mine(records[i:i + 10], 0)
    return chain, users, providers


def test_criterion_6_gv_adversarial():
    chain, users, providers = forge_world()
    rng = random.Random(6)
    attacker = KeyPair.derive("adversary")
    owners = users + providers
    forged = forged_ok = honest = honest_ok = 0
    by_kind: dict[str, int] = {}

    def attempt(kind, valid):
        nonlocal forged, forged_ok
        forged += 1
        forged_ok += bool(valid)
        by_kind[kind] = by_kind.get(kind, 0) + 1

    for idx, o in enumerate(owners):
        a, b = o.txs
        pa, pb = o.proofs[a.t_id], o.proofs[b.t_id]
        # honest requests
        for ok in (validate_remove(make_remove(a.t_id, pa, o.gv_keys, timestamp=1), chain),
                   validate_aged(make_aged(b, pb, o.gv_keys, timestamp=1), chain),
                   validate_summary(build_summary([a, b], o.gv_keys, timestamp=1, proofs=[pa, pb]), chain, [a, b])):
            honest += 1
            honest_ok += ok
        other = owners[(idx + 1 + rng.randrange(len(owners) - 1)) % len(owners)]
        other_proof = other.proofs[other.txs[0].t_id]
        wrong_secret = GvProof(rng.randbytes(len(pa.gvs_bytes)), pa.p_t_id, pa.gv_public)
        stolen_pub = GvProof(pa.gvs_bytes, pa.p_t_id, attacker.public)
        if o.simo:
            cross = GvProof(pa.gvs_bytes, rng.randbytes(32), pa.gv_public)
        else:
            cross = GvProof(pa.gvs_bytes, None, pa.gv_public)
        cases = {
            "wrong secret": (wrong_secret, o.gv_keys),
            "wrong key": (pa, attacker),
            "stolen proof, own key": (stolen_pub, attacker),
            "replayed proof of another owner": (other_proof, other.gv_keys),
            "cross-mode proof": (cross, o.gv_keys),
        }
        if not o.simo:
            # the proof for one transaction reused on the ledger's next one
            cases["replayed proof of sibling"] = (pa, o.gv_keys)
        for kind, (proof, keys) in cases.items():
            target_rm = b if kind == "replayed proof of sibling" else a
            attempt("remove/" + kind, validate_remove(make_remove(target_rm.t_id, proof, keys, timestamp=1), chain))
            target_aged = b if kind == "replayed proof of sibling" else a
            attempt("aged/" + kind, validate_aged(make_aged(target_aged, proof, keys, timestamp=1), chain))
            proofs = [pa, proof] if kind == "replayed proof of sibling" else [proof, pb]
            s = build_summary([a, b], keys, timestamp=1, proofs=proofs)
            attempt("summary/" + kind, validate_summary(s, chain, [a, b]))
    ok = forged >= 10_000 and forged_ok == 0 and honest_ok == honest
    record(6, ok, f"{forged} forged attempts over {len(by_kind)} kinds, {forged_ok} accepted; "
                  f"{honest_ok}/{honest} honest requests accepted")
    assert ok


def test_criterion_7_economics_oracle():
    rng = random.Random(7)
    mismatches = []
    for i in range(1000):
        bad = econ_oracle.compare(econ_oracle.random_instance(rng))
        if bad:
            mismatches.append((i, bad))
    ok = not mismatches
    record(7, ok, f"1000 randomized instances (shares, storage fee, Reward, RewardT, RewardN): "
                  f"{len(mismatches)} mismatches" + (f", first {mismatches[0]}" if mismatches else ""))
    assert ok


def test_criterion_8_determinism(default_run):
    again = run(replace(preset("default"), audit=True))
    same_csv = again.metrics_csv() == default_run.metrics_csv()
    same_snap = all(again.networks[g].chain.encode_snapshot() == n.chain.encode_snapshot()
                    for g, n in default_run.networks.items())
    ok = same_csv and same_snap
    record(8, ok, f"default preset twice with seed {again.config.rng_seed}: metrics.csv identical={same_csv}, "
                  f"snapshots identical={same_snap}")
    assert ok

