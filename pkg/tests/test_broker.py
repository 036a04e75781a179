"""Broker: discovery, the three scheduling strategies, session protocol."""

import pytest

from gridecon.bank import GridBank
from gridecon.broker import (
    BudgetInfeasibleError,
    DeadlineInfeasibleError,
    NoCandidatesError,
    QoSRequest,
    Strategy,
    discover,
    evaluate_candidate,
    run_session,
    schedule_cost_opt,
    schedule_cost_time,
    schedule_time_opt,
)
from gridecon.datagrid import LogicalFile, NetworkLink, ReplicaCatalog
from gridecon.market import MarketDirectory, entry_for
from gridecon.resources import GridResource, Job, JobStatus, ResourceState, Site


def four_job_world(deadline=2.5, budget=100.0, strategy=Strategy.COST_OPT):
    """The worked instance: 4 x 100 MI jobs, R1 (1 PE, 100 MIPS, 1 G$/s)
    and R2 (1 PE, 200 MIPS, 3 G$/s)."""
    sites = {"s": Site(id="s")}
    r1 = GridResource(id="R1", site="s", n_pe=1, pe_rating_mips=100.0,
                      base_price=1.0, provider_account="prov1", apps={"app"})
    r2 = GridResource(id="R2", site="s", n_pe=1, pe_rating_mips=200.0,
                      base_price=3.0, provider_account="prov2", apps={"app"})
    resources = {"R1": r1, "R2": r2}
    states = {rid: ResourceState(r) for rid, r in resources.items()}
    market = MarketDirectory()
    for rid in resources:
        market.register_resource(rid)
        market.publish(entry_for(resources[rid]))
    catalog = ReplicaCatalog()
    bank = GridBank()
    bank.open_account("alice", 100.0)
    bank.open_account("prov1", 0.0)
    bank.open_account("prov2", 0.0)
    jobs = [Job(id=f"j{i}", length_mi=100.0) for i in range(1, 5)]
    qos = QoSRequest(deadline=deadline, budget=budget, strategy=strategy,
                     consumer="alice", home_site="s", app="app")
    return dict(sites=sites, resources=resources, states=states, market=market,
                catalog=catalog, bank=bank, jobs=jobs, qos=qos)


def get_candidates(w, t_now=0.0):
    return discover(w["market"], w["resources"], w["states"], w["catalog"],
                    w["sites"], w["jobs"], w["qos"], t_now)


def test_discover_computes_per_job_estimates():
    w = four_job_world()
    cands = get_candidates(w)
    assert [c.resource.id for c in cands] == ["R1", "R2"]
    assert [c.per_job_cost for c in cands] == [1.0, 1.5]
    assert [c.per_job_time for c in cands] == [1.0, 0.5]
    assert [c.capacity_by_deadline for c in cands] == [2, 4]  # capped at 4 jobs
    live = w["market"].live_entries()
    assert all(c.entry in live for c in cands)


def test_uncapped_capacity_matches_floor_formula():
    # idle homogeneous case: capacity = n_pe * floor(horizon / per_job_time)
    w = four_job_world()
    entry = w["market"].query("compute", app="app")[1]
    cand = evaluate_candidate(entry, w["resources"]["R2"], w["states"]["R2"],
                              w["jobs"][0], w["qos"], w["catalog"], w["sites"],
                              0.0, need=100)
    assert cand.capacity_by_deadline == 1 * int(2.5 // 0.5)  # 5


def test_discover_filters_by_app():
    w = four_job_world()
    w["resources"]["R2"].apps.clear()
    w["market"] = MarketDirectory()
    for rid in w["resources"]:
        w["market"].register_resource(rid)
        w["market"].publish(entry_for(w["resources"][rid]))
    cands = get_candidates(w)
    assert [c.resource.id for c in cands] == ["R1"]


def test_discover_empty_registry_is_an_error():
    w = four_job_world()
    w["market"] = MarketDirectory()
    with pytest.raises(NoCandidatesError):
        get_candidates(w)


def test_discover_orders_by_compute_plus_data_cost():
    # R1: compute 1.0 + data 0.5 vs R2: compute 0.8 + data 1.0
    sites = {"h": Site(id="h"), "s1": Site(id="s1"), "s2": Site(id="s2"),
             "fs": Site(id="fs")}
    r1 = GridResource(id="R1", site="s1", n_pe=1, pe_rating_mips=100.0,
                      base_price=1.0, provider_account="p", apps={"app"})
    r2 = GridResource(id="R2", site="s2", n_pe=1, pe_rating_mips=125.0,
                      base_price=1.0, provider_account="p", apps={"app"})
    resources = {"R1": r1, "R2": r2}
    states = {rid: ResourceState(r) for rid, r in resources.items()}
    market = MarketDirectory()
    for rid in resources:
        market.register_resource(rid)
        market.publish(entry_for(resources[rid]))
    catalog = ReplicaCatalog()
    catalog.add_file(LogicalFile("f", 50.0, frozenset({"fs"})))
    catalog.add_link(NetworkLink("fs", "s1", bandwidth_mb_s=1000.0, price_per_mb=0.01))
    catalog.add_link(NetworkLink("fs", "s2", bandwidth_mb_s=1000.0, price_per_mb=0.02))
    jobs = [Job(id="j1", length_mi=100.0, input_files=["f"])]
    qos = QoSRequest(deadline=100.0, budget=100.0, strategy=Strategy.COST_OPT,
                     consumer="c", home_site="h", app="app")
    cands = discover(market, resources, states, catalog, sites, jobs, qos, 0.0)
    assert [(c.resource.id, c.per_job_cost) for c in cands] == [("R1", 1.5), ("R2", 1.8)]


def test_cost_opt_worked_example():
    w = four_job_world()
    plan = schedule_cost_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)
    assert plan.projected_cost == 5.0
    assert plan.projected_makespan == 2.0
    assert [plan.assignment[f"j{i}"] for i in range(1, 5)] == ["R1", "R1", "R2", "R2"]


def test_cost_opt_budget_infeasible():
    w = four_job_world(budget=4.0)
    with pytest.raises(BudgetInfeasibleError):
        schedule_cost_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)


def test_cost_opt_deadline_infeasible():
    w = four_job_world(deadline=0.9)  # even R2 fits only one job at 0.5 s
    with pytest.raises(DeadlineInfeasibleError):
        schedule_cost_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)


def test_single_job_goes_to_cheapest_feasible():
    w = four_job_world()
    w["jobs"] = [Job(id="j1", length_mi=100.0)]
    plan = schedule_cost_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)
    assert plan.assignment == {"j1": "R1"}
    assert plan.projected_cost == 1.0


def test_time_opt_worked_example():
    w = four_job_world(strategy=Strategy.TIME_OPT)
    plan = schedule_time_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)
    assert plan.projected_makespan == 1.5
    assert plan.projected_cost == 5.5
    assert [plan.assignment[f"j{i}"] for i in range(1, 5)] == ["R2", "R1", "R2", "R2"]


def test_strategy_dominance_on_worked_example():
    w = four_job_world()
    cost_plan = schedule_cost_opt(w["jobs"], get_candidates(w), w["qos"], 0.0)
    w2 = four_job_world(strategy=Strategy.TIME_OPT)
    time_plan = schedule_time_opt(w2["jobs"], get_candidates(w2), w2["qos"], 0.0)
    assert cost_plan.projected_cost <= time_plan.projected_cost
    assert time_plan.projected_makespan <= cost_plan.projected_makespan


def test_time_opt_single_candidate_packs_everything():
    w = four_job_world(strategy=Strategy.TIME_OPT)
    cands = [c for c in get_candidates(w) if c.resource.id == "R1"]
    w["qos"].deadline = 10.0
    plan = schedule_time_opt(w["jobs"], cands, w["qos"], 0.0)
    assert plan.projected_makespan == 4.0  # ceil(4/1) * 1.0 s


def test_cost_time_equals_time_opt_within_equal_cost_tier():
    w = four_job_world(strategy=Strategy.COST_TIME)
    # make both candidates cost the same per job: R2 at 2 G$/s -> 0.5 s * 2 = 1.0
    w["resources"]["R2"].base_price = 2.0
    w["market"] = MarketDirectory()
    for rid in w["resources"]:
        w["market"].register_resource(rid)
        w["market"].publish(entry_for(w["resources"][rid]))
    cands = get_candidates(w)
    assert len({c.per_job_cost for c in cands}) == 1
    ct = schedule_cost_time(w["jobs"], cands, w["qos"], 0.0)
    to = schedule_time_opt(w["jobs"], cands, w["qos"], 0.0)
    assert ct.assignment == to.assignment


def test_cost_time_moves_to_next_tier_only_when_exhausted():
    w = four_job_world(strategy=Strategy.COST_TIME)
    plan = schedule_cost_time(w["jobs"], get_candidates(w), w["qos"], 0.0)
    # R1's capacity (2 by the 2.5 s deadline) is filled before touching R2
    assert sorted(plan.assignment.values()).count("R1") == 2
    assert plan.projected_cost == 5.0


def test_run_session_cost_opt_end_to_end():
    w = four_job_world()
    report = run_session(w["jobs"], w["qos"], market=w["market"],
                         resources=w["resources"], states=w["states"],
                         catalog=w["catalog"], sites=w["sites"], bank=w["bank"])
    assert report.jobs_done == 4
    assert report.jobs_failed == 0
    assert report.total_cost == 5.0
    assert report.makespan == 2.0
    assert report.deadline_met is True
    assert report.budget_respected is True
    assert w["bank"].balance("alice") == 95.0
    assert all(j.status is JobStatus.DONE for j in w["jobs"])
    assert report.per_resource == {
        "R1": {"jobs": 2, "cost": 2.0},
        "R2": {"jobs": 2, "cost": 3.0},
    }


def test_run_session_report_matches_ledger():
    w = four_job_world()
    report = run_session(w["jobs"], w["qos"], market=w["market"],
                         resources=w["resources"], states=w["states"],
                         catalog=w["catalog"], sites=w["sites"], bank=w["bank"])
    ledger_total = 0.0
    for txn in w["bank"].ledger:
        assert txn.debit[0] == "alice"
        ledger_total += txn.debit[1]
    assert report.total_cost == ledger_total
    assert len(w["bank"].ledger) == report.jobs_done


def test_run_session_credit_gate_aborts_before_dispatch():
    w = four_job_world()
    w["bank"] = GridBank()
    w["bank"].open_account("alice", 3.0)  # below the 100 G$ budget
    w["bank"].open_account("prov1", 0.0)
    w["bank"].open_account("prov2", 0.0)
    report = run_session(w["jobs"], w["qos"], market=w["market"],
                         resources=w["resources"], states=w["states"],
                         catalog=w["catalog"], sites=w["sites"], bank=w["bank"])
    assert report.jobs_done == 0
    assert report.jobs_failed == 4
    assert report.failure_reason == "insufficient-credit"
    assert w["bank"].ledger == []
    assert all(j.status is JobStatus.FAILED for j in w["jobs"])


def test_run_session_deadline_infeasible_fails_all_jobs():
    w = four_job_world(deadline=0.9)
    report = run_session(w["jobs"], w["qos"], market=w["market"],
                         resources=w["resources"], states=w["states"],
                         catalog=w["catalog"], sites=w["sites"], bank=w["bank"])
    assert report.jobs_done == 0
    assert report.jobs_failed == 4
    assert report.failure_reason == "deadline-infeasible"
    assert w["bank"].ledger == []


def test_budget_gate_absorbs_peak_price_drift():
    # jobs start just before a x10 peak window; the plan prices them off
    # peak, but the second job's start lands inside the window
    sites = {"s": Site(id="s", utc_offset_hours=0)}
    r = GridResource(id="R1", site="s", n_pe=1, pe_rating_mips=1.0,
                     base_price=1.0, peak_multiplier=10.0, peak_window=(1.0, 2.0),
                     provider_account="prov", apps={"app"})
    resources = {"R1": r}
    states = {"R1": ResourceState(r)}
    market = MarketDirectory()
    market.register_resource("R1")
    market.publish(entry_for(r))
    bank = GridBank()
    bank.open_account("alice", 1000.0)
    bank.open_account("prov", 0.0)
    jobs = [Job(id="j1", length_mi=200.0), Job(id="j2", length_mi=200.0)]
    qos = QoSRequest(deadline=3500.0 + 10000.0, budget=450.0,
                     strategy=Strategy.COST_OPT, consumer="alice",
                     home_site="s", app="app")
    report = run_session(jobs, qos, market=market, resources=resources,
                         states=states, catalog=ReplicaCatalog(), sites=sites,
                         bank=bank, submit_time=3500.0)
    # j1 runs off-peak for 200 G$; j2 would start at 3700 s (inside the
    # window) and cost 2000 G$, so the dispatch gate fails it instead
    assert report.jobs_done == 1
    assert report.jobs_failed == 1
    assert report.failure_reason == "budget"
    assert report.total_cost == 200.0
    assert report.budget_respected is True


def test_capacity_respects_existing_backlog():
    w = four_job_world()
    w["states"]["R1"].reserve(0.0, 1.0)  # one foreign job already holds the PE
    cands = get_candidates(w)
    r1 = next(c for c in cands if c.resource.id == "R1")
    assert r1.capacity_by_deadline == 1  # only [1.0, 2.0) still fits


def test_done_jobs_carry_exact_runtimes_and_costs():
    from gridecon.resources import compute_cost, job_runtime

    w = four_job_world()
    run_session(w["jobs"], w["qos"], market=w["market"], resources=w["resources"],
                states=w["states"], catalog=w["catalog"], sites=w["sites"],
                bank=w["bank"])
    charged = [t.record.job for t in w["bank"].ledger]
    assert sorted(charged) == [j.id for j in w["jobs"]]  # one record per done job
    for job in w["jobs"]:
        resource = w["resources"][job.assigned_resource]
        runtime = job_runtime(job.length_mi, resource.pe_rating_mips)
        assert job.finish_time == job.start_time + runtime
        assert job.cost_incurred == compute_cost(job, resource, job.start_time,
                                                 w["sites"])  # data cost is zero here


def test_gmd_query_latency_delays_planning():
    w = four_job_world(deadline=4.5)  # leaves the usual 2.5 s after the lookup
    w["market"].query_latency = 2.0
    report = run_session(w["jobs"], w["qos"], market=w["market"],
                         resources=w["resources"], states=w["states"],
                         catalog=w["catalog"], sites=w["sites"], bank=w["bank"])
    assert report.jobs_done == 4
    # dispatch happened at t=2, so the makespan includes the lookup latency
    assert report.makespan == 4.0
    assert all(j.start_time >= 2.0 for j in w["jobs"])


def test_code_mb_unlocks_app_absent_resources():
    sites = {"h": Site(id="h"), "s1": Site(id="s1"), "s2": Site(id="s2")}
    hosted = GridResource(id="R1", site="s1", n_pe=1, pe_rating_mips=100.0,
                          base_price=2.0, provider_account="p", apps={"app"})
    bare = GridResource(id="R2", site="s2", n_pe=1, pe_rating_mips=100.0,
                        base_price=1.0, provider_account="p", apps=set())
    resources = {"R1": hosted, "R2": bare}
    states = {rid: ResourceState(r) for rid, r in resources.items()}
    market = MarketDirectory()
    for rid in resources:
        market.register_resource(rid)
        market.publish(entry_for(resources[rid]))
    catalog = ReplicaCatalog()
    catalog.add_link(NetworkLink("h", "s1", bandwidth_mb_s=10.0, price_per_mb=0.01))
    catalog.add_link(NetworkLink("h", "s2", bandwidth_mb_s=10.0, price_per_mb=0.01))
    jobs = [Job(id="j1", length_mi=100.0)]

    qos = QoSRequest(deadline=100.0, budget=100.0, strategy=Strategy.COST_OPT,
                     consumer="c", home_site="h", app="app")
    cands = discover(market, resources, states, catalog, sites, jobs, qos, 0.0)
    assert [c.resource.id for c in cands] == ["R1"]  # default: app filter only

    qos_code = QoSRequest(deadline=100.0, budget=100.0, strategy=Strategy.COST_OPT,
                          consumer="c", home_site="h", app="app", code_mb=50.0)
    cands = discover(market, resources, states, catalog, sites, jobs, qos_code, 0.0)
    by_id = {c.resource.id: c for c in cands}
    assert set(by_id) == {"R1", "R2"}
    # R2 pays 5 s / 0.5 G$ to stage the 50 MB code from the home site
    assert by_id["R2"].per_job_time == 1.0 + 5.0
    assert by_id["R2"].per_job_cost == 1.0 + 0.5
    assert by_id["R1"].code_mb == 0.0 and by_id["R2"].code_mb == 50.0


def test_evaluate_candidate_unreachable_data_returns_none():
    w = four_job_world()
    w["catalog"].add_file(LogicalFile("far", 10.0, frozenset({"island"})))
    job = Job(id="j", length_mi=100.0, input_files=["far"])
    entry = w["market"].query("compute")[0]
    cand = evaluate_candidate(entry, w["resources"]["R1"], w["states"]["R1"],
                              job, w["qos"], w["catalog"], w["sites"], 0.0, 1)
    assert cand is None
