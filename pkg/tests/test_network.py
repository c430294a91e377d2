from dataclasses import replace
from decimal import Decimal

import pytest

from helpers import Owner
from mofbc.agents import RedeemRequest, RemovalTracker, Role, apply_plan
from mofbc.chain import Chain
from mofbc.core import MOM, Transaction, TxRef, seal
from mofbc.encoding import H
from mofbc.memopt import build_summary, make_aged, make_ledger_remove, make_remove
from mofbc.network import Network, NetworkParams, Status, audit_summary
from mofbc.sim import Cohort, SimConfig, Simulator


def network(cp=2, **kw):
    return Network(NetworkParams(block_size=1, cp_weeks=cp, audit=True, **kw))


def user(net, name, **kw):
    o = Owner(name, **kw)
    net.register_key(o.ledger_keys.public)
    return o


def week(net, w, *records, members=None):
    net.start_week(w)
    results = [net.submit(r, members=members) for r in records]
    net.produce_blocks()
    report = net.cleaning_pass() if w > 0 and w % net.params.cp_weeks == 0 else None
    return results, report


class TestSubmit:
    def test_unknown_key_and_bad_parent(self):
        net = network()
        stranger = Owner("stranger")
        assert net.submit(stranger.tx(0)).reason == "unknown signing key"
        o = user(net, "o")
        o.head = H(b"nowhere")
        assert net.submit(o.tx(0)).reason == "p_t_id does not exist"

    def test_bad_signature_and_t_id(self):
        net = network()
        o = user(net, "o")
        t = o.tx(0)
        forged = seal(replace(t, payload=b"changed"), o.ledger_keys)
        forged = replace(forged, signature=t.signature)
        assert net.submit(forged).status == Status.REJECTED
        assert net.submit(replace(t, timestamp=9)).reason == "t_id does not hash the content"

    def test_duplicate(self):
        net = network()
        o = user(net, "o")
        t = o.tx(0)
        assert net.submit(t).accepted
        assert net.submit(t).reason == "duplicate transaction"

    def test_dangling_input(self):
        net = network()
        o = user(net, "o")
        assert net.submit(o.tx(0, inputs=(TxRef(H(b"x"), 0),))).reason == "input does not resolve"

    def test_do_not_store_discarded(self):
        net = network()
        o = user(net, "o")
        r = net.submit(o.tx(0, mom=MOM.DO_NOT_STORE))
        assert r.status == Status.DISCARDED and r.fee == 0
        assert not net.pool

    def test_fees_collected(self):
        net = network()
        o = user(net, "o")
        r = net.submit(o.tx(0, mom=MOM.TEMPORARY, ttl=26))
        assert r.fee == 26 * Decimal("2.5e-9")
        assert net.agents.stma.total_collected == r.fee == net.out_of_pocket_total


class TestPayByReward:
    def test_unlisted_rejected_then_listed_after_redeem(self):
        net = network()
        o = user(net, "o")
        t = o.tx(0, pay_by_reward=True)
        assert net.submit(t).reason == "pay-by-reward transaction not listed by the bank"
        keys = o.ledger_keys
        req = RedeemRequest(t.t_id, public_key=keys.public).signed(keys)
        assert not net.redeem(req, t)  # no balance yet
        net.agents.bank.credit(keys.pk_hash, 2, b"grant")
        assert net.redeem(req, t)
        r = net.submit(t)
        assert r.accepted and r.out_of_pocket == 0 and r.fee > 0
        assert net.agents.bank.balance(keys.pk_hash) == 1


class TestUserOptimizations:
    def test_remove_end_to_end(self):
        net = network()
        o = user(net, "alice")
        target = o.tx(0, payload=b"z" * 2000)
        week(net, 0, target)
        rm = make_remove(target.t_id, o.proofs[target.t_id], o.gv_keys, timestamp=1)
        (res,), _ = week(net, 1, rm)
        assert res.accepted
        assert net.chain.get(target.t_id) is not None
        assert net.pages.pages(target) == 3
        assert net.agents.bank.balance(target.gv) == 2  # 3 pages removed, 1-page request
        _, report = week(net, 2)
        assert net.chain.get(target.t_id) is None
        assert report.unsafe_removals == 0 and report.block_id_mismatches == 0
        assert net.chain.verify() == []

    def test_forged_remove_rejected(self):
        net = network()
        o = user(net, "alice")
        target = o.tx(0)
        week(net, 0, target)
        rm = make_remove(target.t_id, o.proofs[target.t_id], Owner("mallory").gv_keys, timestamp=1)
        assert net.submit(rm).reason == "invalid RemoveTransaction"

    def test_aging_redirects_dependents(self):
        net = network()
        o, d = user(net, "owner"), user(net, "dependent")
        orig = o.tx(0, payload=b"a" * 100, n_outputs=2)
        week(net, 0, orig)
        dep = d.tx(1, inputs=(TxRef(orig.t_id, 1),))
        aged = make_aged(orig, o.proofs[orig.t_id], o.gv_keys, timestamp=1)
        week(net, 1, dep, aged)
        week(net, 2)
        assert net.chain.get(orig.t_id) is None
        assert net.chain.blackboard.resolve(orig.t_id) == aged.t_id
        assert net.chain.resolve_input(dep.inputs[0]) == aged
        # new spends of the removed output still resolve
        spend = d.tx(3, inputs=(TxRef(orig.t_id, 0),))
        assert net.submit(spend).accepted

    def test_ledger_remove(self):
        net = network()
        o = user(net, "l")
        txs = [o.tx(w) for w in range(3)]
        for w, t in enumerate(txs):
            week(net, w if w < 2 else 3, t)
        lr = make_ledger_remove(txs[0].t_id, o.proofs[txs[0].t_id], o.gv_keys, timestamp=4)
        week(net, 5, lr)
        week(net, 6)
        assert all(net.chain.get(t.t_id) is None for t in txs)
        assert net.cp_reports[-1].unsafe_removals == 0

    def test_user_summary(self):
        net = network()
        o = user(net, "u")
        txs = [o.tx(0, payload=b"s" * 50) for _ in range(4)]
        week(net, 0, *txs)
        s = build_summary(txs, o.gv_keys, timestamp=1, proofs=[o.proofs[t.t_id] for t in txs])
        assert net.submit(s).reason == "summary submitted without its member ids"
        (res,), _ = week(net, 1, s, members=[t.t_id for t in txs])
        assert res.accepted
        _, report = week(net, 2)
        assert all(net.chain.get(t.t_id) is None for t in txs)
        assert audit_summary(net.chain, s, [t.t_id for t in txs]) == (4, 4)
        assert report.unsafe_removals == 0


class TestNetworkSummaries:
    def run_summarizable(self, net, n=5, weeks=3):
        o = user(net, "s")
        for w in range(weeks):
            week(net, w, *[o.tx(w, mom=MOM.SUMMARIZABLE) for _ in range(n)])
        return o

    def test_cp_summarizes_and_audits(self):
        net = network()
        o = self.run_summarizable(net)
        report = net.cp_reports[0]
        assert report.summaries == 1
        # week 2's transactions are mined before that week's pass, so all 15 go
        assert report.removed == 15
        assert report.proofs_checked == 15 and report.proofs_failed == 0
        assert net.agents.bank.total_credited > 0
        assert all(net.chain.get(t.t_id) is None for t in o.txs)
        assert net.wasted_memory_bytes == 0

    def test_malicious_sma_detected(self):
        net = network()
        reg = net.agents.registry
        bad = list(reg.active(Role.SMA))
        for rep in bad:
            rep.fault = lambda s, rep=rep: seal(replace(s, merkle_root=H(b"lie")), rep.keys)
        self.run_summarizable(net)
        report = net.cp_reports[0]
        assert report.sma_faults >= 1
        assert not any(r.active for r in bad if r.agent_id in {e["replica"] for e in net.agents.events.of("sma_fault")})
        assert report.proofs_failed == 0
        mined = [e.content for e in net.chain.entries() if type(e.content).__name__ == "SummaryTransaction"]
        assert mined and all(s.merkle_root != H(b"lie") for s in mined)

    def test_malicious_sera_detected(self):
        net = network()
        o = user(net, "p")
        keep = o.tx(0)
        week(net, 0, keep, o.tx(0, mom=MOM.TEMPORARY, ttl=1))
        for rep in net.agents.registry.active(Role.SERA):
            rep.fault = lambda plan: replace(plan, removals=plan.removals + [keep.t_id])
        _, report = week(net, 2)
        assert report.sera_faults == 1
        assert net.chain.get(keep.t_id) is not None
        assert report.unsafe_removals == 0
        assert report.removed == 1


def test_wasted_memory_timeline():
    # TTL 26 mined at week 0, CP 90: wasted from week 26 until the week-90 pass
    net = Network(NetworkParams(block_size=1, cp_weeks=90))
    o = user(net, "w")
    t = o.tx(0, mom=MOM.TEMPORARY, ttl=26)
    timeline = {}
    for w in range(95):
        week(net, w, *([t] if w == 0 else []))
        timeline[w] = net.wasted_memory_bytes
    size = 1 + t.size
    assert all(timeline[w] == 0 for w in range(26))
    assert all(timeline[w] == size for w in range(26, 90))
    assert all(timeline[w] == 0 for w in range(90, 95))
    assert net.chain.get(t.t_id) is None


def small_config(**kw):
    cohorts = (Cohort("perm", 7, MOM.PERMANENT), Cohort("temp", 6, MOM.TEMPORARY, 3),
               Cohort("summ", 7, MOM.SUMMARIZABLE), Cohort("dns", 2, MOM.DO_NOT_STORE))
    base = dict(weeks=24, cohorts=cohorts, cp_weeks=4, audit=True)
    base.update(kw)
    return SimConfig(**base)


def test_sera_matches_independent_miner_byte_for_byte():
    sim = Simulator(small_config())
    net = sim.networks["main"]
    tracker = RemovalTracker(net.chain)
    state = {"fed": 0, "checks": 0, "shadow": None}
    real_plan = net.agents.sera.plan

    def feed():
        for b in net.chain.blocks[state["fed"]:]:
            for e in b.entries:
                tracker.observe(e.content, net.targets.get(e.t_id, ()))
        state["fed"] = len(net.chain)

    def plan_and_shadow(week_no):
        feed()
        shadow = Chain.decode_snapshot(net.chain.encode_snapshot())
        tracker.chain = shadow
        apply_plan(shadow, tracker.plan(week_no))
        state["shadow"] = shadow
        return real_plan(week_no)

    net.agents.sera.plan = plan_and_shadow
    for w in range(sim.cfg.weeks):
        sim.step()
        if state["shadow"] is not None:
            assert state["shadow"].encode_snapshot() == net.chain.encode_snapshot(), f"week {w}"
            state["checks"] += 1
            state["shadow"] = None
        feed()
    assert state["checks"] == 5


def test_conservation_and_audit_counters():
    sim = Simulator(small_config())
    for _ in range(sim.cfg.weeks):
        sim.step()
    res = sim.result()
    net = res.networks["main"]
    last = res.frames[-1]
    pending = sum(1 for r in net.pool if isinstance(r, Transaction))
    assert last.user_tx_emitted == last.user_tx_mined + last.dns_discarded + pending
    assert all(r.unsafe_removals == 0 and r.block_id_mismatches == 0 and r.proofs_failed == 0
               for r in net.cp_reports)
    assert net.chain.verify() == []
    # no reward credited twice for one event
    assert len(net.agents.bank.credited) == len(net.agents.events.of("bank_credit"))
    assert net.agents.events.of("bank_duplicate_credit") == []
    stats = res.cohorts
    for c in stats.values():
        assert 0 <= c.out_of_pocket <= c.fees


def test_false_storage_claim_blacklisted_and_unpaid():
    sim = Simulator(small_config(weeks=8))
    net = sim.networks["main"]
    net.miners[0].storage_factor = 2.0
    for _ in range(8):
        sim.step()
    assert net.agents.pa.blacklist == {"miner-0"}
    payouts = net.agents.stma.history[-1].payouts
    assert "miner-0" not in payouts and set(payouts) == {"miner-1", "miner-2"}
    assert net.agents.stma.total_paid <= net.agents.stma.total_collected


def test_summary_audit_rejects_non_member():
    net = network()
    o = user(net, "x")
    for w in range(3):
        week(net, w, o.tx(w, mom=MOM.SUMMARIZABLE), o.tx(w, mom=MOM.SUMMARIZABLE))
    s = next(e.content for e in net.chain.entries() if type(e.content).__name__ == "SummaryTransaction")
    members = [t.t_id for t in o.txs]
    assert s.k == 6
    assert audit_summary(net.chain, s, members) == (6, 6)
    ok, n = audit_summary(net.chain, s, members[:5] + [H(b"outsider")])
    assert ok < n


@pytest.mark.parametrize("bpw", [1, 3])
def test_weekly_block_budget(bpw):
    net = Network(NetworkParams(block_size=1, blocks_per_week=bpw))
    o = user(net, "b")
    net.start_week(0)
    for _ in range(5):
        net.submit(o.tx(0))
    assert len(net.produce_blocks()) == bpw
    assert len(net.pool) == 5 - bpw
