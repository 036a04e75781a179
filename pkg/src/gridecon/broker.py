"""Economy-driven grid service broker.

A broker session runs the full consumer workflow: credit check, service
discovery through the market directory, deadline/budget-constrained planning
(cost-optimize, time-optimize, or cost-time), dispatch with staged data
transfers, per-job metering and charging through the bank, and a final
report.

Planning and execution share one timing model: a job holds its PE for
stage-in + compute + stage-out, and slots are committed at dispatch time.
Because transfer and compute times are exact, a plan's projected starts and
finishes are the starts and finishes that actually happen; only the price
can drift (a job may start inside a peak window the estimate missed), which
a per-job budget gate at dispatch absorbs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .bank import GridBank, InsufficientFundsError, UsageRecord
from .datagrid import NoRouteError, Objective, ReplicaCatalog, UnreachableFileError
from .kernel import Entity, Event, Msg, Simulator
from .market import MarketDirectory
from .resources import (
    GridResource,
    Job,
    JobStatus,
    ResourceState,
    Site,
    job_runtime,
    price_at,
)


class Strategy(str, Enum):
    COST_OPT = "cost"
    TIME_OPT = "time"
    COST_TIME = "costtime"


class NoCandidatesError(Exception):
    pass


class DeadlineInfeasibleError(Exception):
    pass


class BudgetInfeasibleError(Exception):
    pass


@dataclass
class QoSRequest:
    deadline: float  # absolute simulated time
    budget: float
    strategy: Strategy
    consumer: str
    home_site: str
    app: str
    # size of the application code; > 0 lets the broker consider resources
    # that do not host the app by staging the code from the home site
    code_mb: float = 0.0

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be > 0")
        if self.deadline <= 0:
            raise ValueError("deadline must be > 0")


def replica_objective(strategy: Strategy) -> Objective:
    return Objective.MIN_COST if strategy is Strategy.COST_OPT else Objective.MIN_TIME


@dataclass
class CandidateResource:
    """A discovered resource enriched with per-job planning estimates.

    Estimates use the first job of the set as representative; sweep jobs are
    homogeneous in length and per-file input sizes.
    """

    entry: object
    resource: GridResource
    state: ResourceState
    pe_free: list[float]  # snapshot at discovery
    per_job_cost: float   # compute at estimated start price + data in/out
    per_job_time: float   # stage-in + compute + stage-out
    capacity_by_deadline: int
    code_mb: float = 0.0  # application code staged when the app is absent


@dataclass
class SchedulePlan:
    assignment: dict[str, str]  # job id -> resource id
    projected_cost: float
    projected_makespan: float


@dataclass
class BrokerReport:
    session: str
    jobs_total: int
    jobs_done: int
    jobs_failed: int
    makespan: float
    total_cost: float
    deadline_met: bool
    budget_respected: bool
    per_resource: dict[str, dict] = field(default_factory=dict)
    failure_reason: str | None = None


def fcfs_capacity(pe_free: list[float], t_now: float, per_job_time: float,
                  deadline: float, need: int) -> int:
    """Jobs finishing by ``deadline`` under FCFS chaining from the given
    per-PE free times, capped at ``need``.

    Counting walks the same float additions the dispatcher performs, so the
    capacity agrees exactly with what a dispatch would achieve.
    """
    total = 0
    for nft in pe_free:
        t = nft if nft > t_now else t_now
        while total < need:
            end = t + per_job_time
            if end > deadline:
                break
            t = end
            total += 1
        if total >= need:
            break
    return total


def evaluate_candidate(entry, resource: GridResource, state: ResourceState,
                       job: Job, qos: QoSRequest, catalog: ReplicaCatalog,
                       sites: dict[str, Site], t_now: float, need: int,
                       code_mb: float = 0.0) -> CandidateResource | None:
    """Enrich one service entry with per-job cost/time estimates, or None
    when the job's data cannot reach the resource (or results cannot return).

    ``code_mb`` > 0 stages the application code from the consumer's home
    site ahead of the input data (the move-code alternative).
    """
    objective = replica_objective(qos.strategy)
    try:
        stage_in = catalog.data_overhead(job.input_files, resource.site, objective)
        in_t, in_c = stage_in.transfer_time, stage_in.transfer_cost
        if code_mb > 0:
            code_t, code_c = catalog.site_transfer(code_mb, qos.home_site, resource.site)
            in_t += code_t
            in_c += code_c
        if job.output_mb > 0:
            out_t, out_c = catalog.site_transfer(job.output_mb, resource.site, qos.home_site)
        else:
            out_t, out_c = 0.0, 0.0
    except (UnreachableFileError, NoRouteError):
        return None
    runtime = job_runtime(job.length_mi, resource.pe_rating_mips)
    per_job_time = in_t + runtime + out_t
    pe_free = state.snapshot()
    est_start = max(t_now, min(pe_free)) + in_t
    per_job_cost = runtime * price_at(resource, est_start, sites) + in_c + out_c
    capacity = fcfs_capacity(pe_free, t_now, per_job_time, qos.deadline, need)
    return CandidateResource(
        entry=entry,
        resource=resource,
        state=state,
        pe_free=pe_free,
        per_job_cost=per_job_cost,
        per_job_time=per_job_time,
        capacity_by_deadline=capacity,
        code_mb=code_mb,
    )


def discover(market: MarketDirectory, resources: dict[str, GridResource],
             states: dict[str, ResourceState], catalog: ReplicaCatalog,
             sites: dict[str, Site], jobs: list[Job], qos: QoSRequest,
             t_now: float) -> list[CandidateResource]:
    """Candidate resources for the job set, cheapest per-job first.

    Entries hosting the requested app qualify directly. With qos.code_mb > 0
    the broker also weighs moving the code: entries without the app join the
    candidate list carrying the code-staging overhead.
    """
    candidates = []
    for entry in market.query("compute"):
        hosts_app = qos.app in entry.apps
        if not hosts_app and qos.code_mb <= 0:
            continue
        resource = resources[entry.resource]
        cand = evaluate_candidate(entry, resource, states[resource.id], jobs[0],
                                  qos, catalog, sites, t_now, need=len(jobs),
                                  code_mb=0.0 if hosts_app else qos.code_mb)
        if cand is not None:
            candidates.append(cand)
    if not candidates:
        raise NoCandidatesError(f"no live compute service supports app {qos.app!r}")
    candidates.sort(key=lambda c: (c.per_job_cost, c.resource.id))
    return candidates


def _fold_cost(jobs: list[Job], assignment: dict[str, str],
               cost_of: dict[str, float]) -> float:
    # fsum is exactly rounded and order independent, so any two assignments
    # with the same per-job cost multiset total to the identical float
    return math.fsum(cost_of[assignment[job.id]] for job in jobs)


def _pack(jobs: list[Job], assignment: dict[str, str],
          by_rid: dict[str, CandidateResource], t_now: float) -> dict[str, float]:
    """FCFS-pack the assignment on snapshot PE timelines; job id -> end time."""
    free = {rid: list(c.pe_free) for rid, c in by_rid.items()}
    ends: dict[str, float] = {}
    for job in jobs:
        rid = assignment[job.id]
        pes = free[rid]
        pe = min(range(len(pes)), key=lambda i: pes[i])
        start = max(t_now, pes[pe])
        end = start + by_rid[rid].per_job_time
        pes[pe] = end
        ends[job.id] = end
    return ends


def _finish_plan(jobs, assignment, candidates, qos, t_now) -> SchedulePlan:
    by_rid = {c.resource.id: c for c in candidates}
    cost_of = {rid: c.per_job_cost for rid, c in by_rid.items()}
    cost = _fold_cost(jobs, assignment, cost_of)
    if cost > qos.budget:
        raise BudgetInfeasibleError(
            f"projected cost {cost} exceeds budget {qos.budget}"
        )
    ends = _pack(jobs, assignment, by_rid, t_now)
    makespan = max(ends.values()) - t_now if ends else 0.0
    return SchedulePlan(assignment=assignment, projected_cost=cost,
                        projected_makespan=makespan)


def schedule_cost_opt(jobs: list[Job], candidates: list[CandidateResource],
                      qos: QoSRequest, t_now: float) -> SchedulePlan:
    """Cheapest-first fill: traverse candidates by ascending per-job cost and
    load each up to its deadline capacity.

    For homogeneous jobs this is cost-optimal among deadline-feasible
    assignments: any job moved to a more expensive candidate can only raise
    the total.
    """
    order = sorted(candidates, key=lambda c: (c.per_job_cost, c.resource.id))
    assignment: dict[str, str] = {}
    idx = 0
    for cand in order:
        take = min(cand.capacity_by_deadline, len(jobs) - idx)
        for job in jobs[idx:idx + take]:
            assignment[job.id] = cand.resource.id
        idx += take
        if idx == len(jobs):
            break
    if idx < len(jobs):
        raise DeadlineInfeasibleError(
            f"capacity for {idx} of {len(jobs)} jobs by deadline {qos.deadline}"
        )
    return _finish_plan(jobs, assignment, candidates, qos, t_now)


def schedule_time_opt(jobs: list[Job], candidates: list[CandidateResource],
                      qos: QoSRequest, t_now: float) -> SchedulePlan:
    """Greedy earliest completion time, jobs in id order; ties prefer the
    cheaper candidate, then the lower resource id."""
    order = sorted(candidates, key=lambda c: (c.per_job_cost, c.resource.id))
    free = {c.resource.id: list(c.pe_free) for c in order}
    assignment: dict[str, str] = {}
    last_end = t_now
    for job in jobs:
        best_key = None
        best_rid = None
        best_pe = None
        for c in order:
            pes = free[c.resource.id]
            pe = min(range(len(pes)), key=lambda i: pes[i])
            start = max(t_now, pes[pe])
            key = (start + c.per_job_time, c.per_job_cost, c.resource.id)
            if best_key is None or key < best_key:
                best_key, best_rid, best_pe = key, c.resource.id, pe
        free[best_rid][best_pe] = best_key[0]
        assignment[job.id] = best_rid
        if best_key[0] > last_end:
            last_end = best_key[0]
    if last_end > qos.deadline:
        raise DeadlineInfeasibleError(
            f"projected makespan ends at {last_end}, deadline {qos.deadline}"
        )
    return _finish_plan(jobs, assignment, candidates, qos, t_now)


def schedule_cost_time(jobs: list[Job], candidates: list[CandidateResource],
                       qos: QoSRequest, t_now: float) -> SchedulePlan:
    """Cost-primary, time-secondary: process equal-cost candidate groups in
    ascending cost order, earliest-completion-time inside a group, moving on
    only when the group's deadline capacity is exhausted."""
    groups: dict[float, list[CandidateResource]] = {}
    for c in candidates:
        groups.setdefault(c.per_job_cost, []).append(c)
    free = {c.resource.id: list(c.pe_free) for c in candidates}
    used = {c.resource.id: 0 for c in candidates}
    assignment: dict[str, str] = {}
    idx = 0
    for cost_key in sorted(groups):
        members = sorted(groups[cost_key], key=lambda c: c.resource.id)
        while idx < len(jobs):
            best_key = None
            best_rid = None
            best_pe = None
            for c in members:
                if used[c.resource.id] >= c.capacity_by_deadline:
                    continue
                pes = free[c.resource.id]
                pe = min(range(len(pes)), key=lambda i: pes[i])
                start = max(t_now, pes[pe])
                key = (start + c.per_job_time, c.resource.id)
                if best_key is None or key < best_key:
                    best_key, best_rid, best_pe = key, c.resource.id, pe
            if best_rid is None:
                break  # group capacity exhausted
            free[best_rid][best_pe] = best_key[0]
            used[best_rid] += 1
            assignment[jobs[idx].id] = best_rid
            idx += 1
        if idx == len(jobs):
            break
    if idx < len(jobs):
        raise DeadlineInfeasibleError(
            f"capacity for {idx} of {len(jobs)} jobs by deadline {qos.deadline}"
        )
    return _finish_plan(jobs, assignment, candidates, qos, t_now)


_SCHEDULERS = {
    Strategy.COST_OPT: schedule_cost_opt,
    Strategy.TIME_OPT: schedule_time_opt,
    Strategy.COST_TIME: schedule_cost_time,
}


def make_plan(jobs, candidates, qos, t_now) -> SchedulePlan:
    return _SCHEDULERS[qos.strategy](jobs, candidates, qos, t_now)


@dataclass
class _DispatchInfo:
    resource: str
    slot_start: float
    compute_start: float
    compute_finish: float
    slot_end: float
    compute_cost: float
    data_cost: float
    data_mb: float
    total: float


class BrokerSession(Entity):
    """One consumer session as a simulation entity.

    The whole accepted plan is dispatched eagerly (slots are committed at
    dispatch, so nothing a later event does can change this session's starts
    or finishes), and a replan tick fires every ``reschedule_interval``
    simulated seconds to pick up any job still waiting for a resource.
    Dispatched jobs are never migrated.
    """

    def __init__(self, sim: Simulator, name: str, jobs: list[Job], qos: QoSRequest, *,
                 market: MarketDirectory, resources: dict[str, GridResource],
                 states: dict[str, ResourceState], catalog: ReplicaCatalog,
                 sites: dict[str, Site], bank: GridBank,
                 submit_time: float = 0.0, reschedule_interval: float = 10.0):
        super().__init__(f"session:{name}")
        if not jobs:
            raise ValueError(f"session {name!r} has no jobs")
        self.name = name
        self.jobs = jobs
        self.jobs_by_id = {j.id: j for j in jobs}
        self.qos = qos
        self.market = market
        self.resources = resources
        self.states = states
        self.catalog = catalog
        self.sites = sites
        self.bank = bank
        self.submit_time = submit_time
        self.reschedule_interval = reschedule_interval
        self.plan: SchedulePlan | None = None
        self.report: BrokerReport | None = None
        self.dispatch_info: dict[str, _DispatchInfo] = {}
        self._spent = Fraction(0)
        self._committed = Fraction(0)
        self._total_cost = 0.0
        self._settled = 0
        self._last_finish = submit_time
        self._failure_reason: str | None = None
        self._per_resource: dict[str, dict] = {}
        self._finished = False

    # -- event handling -----------------------------------------------------

    def handle(self, sim: Simulator, event: Event) -> None:
        kind = event.payload.kind
        if kind == "session_start":
            self._start(sim)
        elif kind == "plan":
            self._plan_and_dispatch(sim)
        elif kind == "replan":
            self._replan(sim)
        elif kind == "stage_in":
            self.jobs_by_id[event.payload.job].advance_status(JobStatus.TRANSFERRING)
        elif kind == "run_start":
            job = self.jobs_by_id[event.payload.job]
            job.advance_status(JobStatus.RUNNING)
            job.start_time = self.dispatch_info[job.id].compute_start
        elif kind == "job_done":
            self._complete(sim, event.payload.job)
        else:
            raise ValueError(f"unknown message kind {kind!r}")

    def _start(self, sim: Simulator) -> None:
        now = sim.now()
        for job in self.jobs:
            job.submit_time = now
            job.advance_status(JobStatus.QUEUED)
        if not self.bank.check_credit(self.qos.consumer, self.qos.budget):
            self._fail_all(sim, "insufficient-credit")
            return
        sim.schedule_at(now + self.market.query_latency, self.id, Msg("plan"))

    def _plan_and_dispatch(self, sim: Simulator) -> None:
        now = sim.now()
        try:
            candidates = discover(self.market, self.resources, self.states,
                                  self.catalog, self.sites, self.jobs, self.qos, now)
            plan = make_plan(self.jobs, candidates, self.qos, now)
        except NoCandidatesError:
            self._fail_all(sim, "no-candidates")
            return
        except DeadlineInfeasibleError:
            self._fail_all(sim, "deadline-infeasible")
            return
        except BudgetInfeasibleError:
            self._fail_all(sim, "budget-infeasible")
            return
        self.plan = plan
        by_rid = {c.resource.id: c for c in candidates}
        for job in self.jobs:
            self._dispatch_job(sim, job, by_rid[plan.assignment[job.id]], now)
        if not self._finished:
            sim.schedule_at(now + self.reschedule_interval, self.id, Msg("replan"))

    def _replan(self, sim: Simulator) -> None:
        if self._finished:
            return
        now = sim.now()
        pending = [j for j in self.jobs if j.status is JobStatus.QUEUED]
        if pending:
            try:
                candidates = discover(self.market, self.resources, self.states,
                                      self.catalog, self.sites, pending, self.qos, now)
                plan = make_plan(pending, candidates, self.qos, now)
            except (NoCandidatesError, DeadlineInfeasibleError, BudgetInfeasibleError):
                plan = None
            if plan is not None:
                by_rid = {c.resource.id: c for c in candidates}
                for job in pending:
                    self._dispatch_job(sim, job, by_rid[plan.assignment[job.id]], now)
        if not self._finished:
            sim.schedule_at(now + self.reschedule_interval, self.id, Msg("replan"))

    def _dispatch_job(self, sim: Simulator, job: Job, cand: CandidateResource,
                      now: float) -> None:
        resource = cand.resource
        objective = replica_objective(self.qos.strategy)
        try:
            stage_in = self.catalog.data_overhead(job.input_files, resource.site, objective)
            in_t, in_c = stage_in.transfer_time, stage_in.transfer_cost
            if cand.code_mb > 0:
                code_t, code_c = self.catalog.site_transfer(
                    cand.code_mb, self.qos.home_site, resource.site)
                in_t += code_t
                in_c += code_c
            if job.output_mb > 0:
                out_t, out_c = self.catalog.site_transfer(
                    job.output_mb, resource.site, self.qos.home_site)
            else:
                out_t, out_c = 0.0, 0.0
        except (UnreachableFileError, NoRouteError):
            self._fail_job(sim, job, "data-unreachable")
            return
        runtime = job_runtime(job.length_mi, resource.pe_rating_mips)
        slot_seconds = in_t + runtime + out_t
        state = self.states[resource.id]
        pe, slot_start, slot_end = state.peek(now, slot_seconds)
        compute_start = slot_start + in_t
        compute_cost = runtime * price_at(resource, compute_start, self.sites)
        total = compute_cost + in_c + out_c
        # hard budget gate: prices may drift from the plan's estimate when a
        # start lands inside a peak window, so never rely on the plan alone
        if self._spent + self._committed + Fraction(total) > Fraction(self.qos.budget):
            self._fail_job(sim, job, "budget")
            return
        state.pe_free[pe] = slot_end
        self._committed += Fraction(total)
        in_mb = sum(self.catalog.files[f].size_mb for f in job.input_files)
        self.dispatch_info[job.id] = _DispatchInfo(
            resource=resource.id,
            slot_start=slot_start,
            compute_start=compute_start,
            compute_finish=compute_start + runtime,
            slot_end=slot_end,
            compute_cost=compute_cost,
            data_cost=in_c + out_c,
            data_mb=in_mb + cand.code_mb + job.output_mb,
            total=total,
        )
        job.advance_status(JobStatus.DISPATCHED)
        job.assigned_resource = resource.id
        sim.schedule_at(slot_start, self.id,
                        Msg("stage_in", job=job.id, resource=resource.id,
                            value=in_t))
        sim.schedule_at(compute_start, self.id,
                        Msg("run_start", job=job.id, resource=resource.id))
        sim.schedule_at(slot_end, self.id,
                        Msg("job_done", job=job.id, resource=resource.id, value=total))

    def _complete(self, sim: Simulator, job_id: str) -> None:
        now = sim.now()
        job = self.jobs_by_id[job_id]
        info = self.dispatch_info[job_id]
        resource = self.resources[info.resource]
        record = UsageRecord(
            consumer=self.qos.consumer,
            provider=resource.provider_account,
            resource=resource.id,
            job=job_id,
            pe_seconds=job_runtime(job.length_mi, resource.pe_rating_mips),
            data_mb=info.data_mb,
            amount=info.total,
            time=now,
        )
        self._committed -= Fraction(info.total)
        try:
            self.bank.charge(record)
        except InsufficientFundsError:
            # consumer drained by a concurrent session: the provider refuses
            # completion without payment
            job.advance_status(JobStatus.FAILED)
            self._failure_reason = self._failure_reason or "charge-failed"
            self._settle(sim)
            return
        self._spent += Fraction(info.total)
        self._total_cost += info.total
        job.finish_time = info.compute_finish
        job.cost_incurred = info.total
        job.advance_status(JobStatus.DONE)
        tally = self._per_resource.setdefault(info.resource, {"jobs": 0, "cost": 0.0})
        tally["jobs"] += 1
        tally["cost"] += info.total
        if now > self._last_finish:
            self._last_finish = now
        self._settle(sim)

    # -- bookkeeping ----------------------------------------------------------

    def _fail_job(self, sim: Simulator, job: Job, reason: str) -> None:
        job.advance_status(JobStatus.FAILED)
        self._failure_reason = self._failure_reason or reason
        self._settle(sim)

    def _fail_all(self, sim: Simulator, reason: str) -> None:
        self._failure_reason = reason
        for job in self.jobs:
            if job.status not in (JobStatus.DONE, JobStatus.FAILED):
                job.advance_status(JobStatus.FAILED)
        self._settled = len(self.jobs)
        self._finalize()

    def _settle(self, sim: Simulator) -> None:
        self._settled += 1
        if self._settled == len(self.jobs):
            self._finalize()

    def _finalize(self) -> None:
        done = sum(1 for j in self.jobs if j.status is JobStatus.DONE)
        failed = sum(1 for j in self.jobs if j.status is JobStatus.FAILED)
        makespan = self._last_finish - self.submit_time if done else 0.0
        self.report = BrokerReport(
            session=self.name,
            jobs_total=len(self.jobs),
            jobs_done=done,
            jobs_failed=failed,
            makespan=makespan,
            total_cost=self._total_cost,
            deadline_met=(done == len(self.jobs) and self._last_finish <= self.qos.deadline),
            budget_respected=self._spent <= Fraction(self.qos.budget),
            per_resource=self._per_resource,
            failure_reason=self._failure_reason,
        )
        self._finished = True

    @property
    def finished(self) -> bool:
        return self._finished

    def finalize_partial(self, reason: str = "end-of-simulation") -> None:
        """Produce a report for a session cut off by the simulation horizon."""
        if not self._finished:
            self._failure_reason = self._failure_reason or reason
            self._finalize()

    def job_rows(self) -> list[tuple]:
        """Per-job outcome rows: (job, resource, submit, start, finish,
        compute_cost, data_cost, status)."""
        rows = []
        for job in self.jobs:
            info = self.dispatch_info.get(job.id)
            rows.append((
                job.id,
                job.assigned_resource or "",
                job.submit_time if job.submit_time is not None else "",
                job.start_time if job.start_time is not None else "",
                job.finish_time if job.finish_time is not None else "",
                info.compute_cost if info else "",
                info.data_cost if info else "",
                job.status.value,
            ))
        return rows


def run_session(jobs: list[Job], qos: QoSRequest, *, market: MarketDirectory,
                resources: dict[str, GridResource], states: dict[str, ResourceState],
                catalog: ReplicaCatalog, sites: dict[str, Site], bank: GridBank,
                submit_time: float = 0.0, reschedule_interval: float = 10.0,
                sim: Simulator | None = None) -> BrokerReport:
    """Run one session to completion on a private simulator and return its
    report. Scenario runs wire BrokerSession entities into a shared simulator
    instead."""
    sim = sim or Simulator()
    session = BrokerSession(
        sim, "session", jobs, qos, market=market, resources=resources,
        states=states, catalog=catalog, sites=sites, bank=bank,
        submit_time=submit_time, reschedule_interval=reschedule_interval,
    )
    sim.add_entity(session)
    sim.schedule_at(submit_time, session.id, Msg("session_start"))
    limit = max(qos.deadline * 4, submit_time + 1.0)
    while not session.finished:
        stats = sim.run_until(limit)
        if stats.events_delivered == 0 and not session.finished:
            raise RuntimeError("session did not finish before the run limit")
        limit = limit * 2 + 1.0
    return session.report
