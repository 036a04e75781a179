"""Proportional-share cluster scheduling with deadline/budget admission.

Each admitted job needs a CPU share of remaining_work / (rating * time_to_
deadline) to meet its deadline. Admission accepts a job only where the
required shares still fit in unit capacity, so every admitted job can be
given at least its required share; spare capacity is then redistributed in
proportion to the required shares. Between arrivals and departures execution
is piecewise linear, which makes every completion time closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .bank import GridBank, InsufficientFundsError, UsageRecord
from .kernel import Entity, Event, Msg, Simulator
from .resources import Job, JobStatus

#: Remaining work at or below this many MI counts as complete; advancing to
#: an exact completion time leaves float residues around 1e-13 of the length.
COMPLETION_EPS_MI = 1e-9


@dataclass
class LibraJob:
    job: Job
    deadline: float  # absolute
    budget: float
    remaining_mi: float
    share: float = 0.0
    admitted_at: float = 0.0


@dataclass
class ClusterNode:
    id: str
    rating_mips: float
    jobs: list[LibraJob] = field(default_factory=list)
    last_update: float = 0.0
    epoch: int = 0


@dataclass
class Admission:
    accepted: bool
    node: str | None = None
    reason: str | None = None


def required_share(remaining_mi: float, rating_mips: float, deadline: float,
                   t_now: float) -> float:
    """Fraction of a node needed to finish ``remaining_mi`` by ``deadline``;
    values above 1 mean the node cannot make the deadline."""
    if t_now >= deadline:
        raise ValueError(f"deadline {deadline} is not in the future (now {t_now})")
    return remaining_mi / (rating_mips * (deadline - t_now))


def job_price(length_mi: float, deadline: float, submit: float,
              alpha: float, beta: float) -> float:
    """Admission price: alpha G$ per MI plus beta times the work rate the
    deadline demands, so urgent jobs pay more for the same length."""
    return alpha * length_mi + beta * length_mi / (deadline - submit)


def node_load(node: ClusterNode, t_now: float) -> float:
    """Sum of the active jobs' required shares at ``t_now``."""
    return sum(
        required_share(lj.remaining_mi, node.rating_mips, lj.deadline, t_now)
        for lj in node.jobs
    )


def recompute_shares(node: ClusterNode, t_now: float) -> None:
    """Give every job its required share plus a proportional cut of the spare.

    The last job's share is closed against 1 so a non-empty node's shares
    always sum to exactly 1.0.
    """
    if not node.jobs:
        return
    required = [
        required_share(lj.remaining_mi, node.rating_mips, lj.deadline, t_now)
        for lj in node.jobs
    ]
    total = sum(required)
    if total > 1.0 + 1e-9:
        raise AssertionError(f"node {node.id} oversubscribed: {total}")
    spare = 1.0 - total
    acc = 0.0
    for lj, req in zip(node.jobs[:-1], required[:-1]):
        lj.share = req + spare * (req / total)
        acc += lj.share
    node.jobs[-1].share = 1.0 - acc


def advance(node: ClusterNode, dt: float) -> list[LibraJob]:
    """Run the node for ``dt`` seconds at current shares; returns completions.

    Callers segment time so that no arrival or departure falls strictly
    inside the interval.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    finished = []
    survivors = []
    for lj in node.jobs:
        lj.remaining_mi -= lj.share * node.rating_mips * dt
        if lj.remaining_mi <= COMPLETION_EPS_MI:
            lj.remaining_mi = 0.0
            finished.append(lj)
        else:
            survivors.append(lj)
    node.jobs = survivors
    return finished


class LibraCluster:
    """Admission control plus share bookkeeping for one cluster."""

    def __init__(self, cluster_id: str, nodes: list[ClusterNode],
                 alpha: float = 0.01, beta: float = 1.0,
                 provider_account: str = ""):
        self.id = cluster_id
        self.nodes = nodes
        self.alpha = alpha
        self.beta = beta
        self.provider_account = provider_account

    def price(self, job: Job, deadline: float, submit: float) -> float:
        return job_price(job.length_mi, deadline, submit, self.alpha, self.beta)

    def admit(self, job: Job, deadline: float, budget: float,
              t_now: float) -> Admission:
        """Place the job on the least-loaded node where it fits, or reject.

        Rejection is a normal outcome, not an error: budget-insufficient when
        the admission price exceeds the job's budget, deadline-infeasible
        when no node has enough spare required-share capacity.
        """
        if deadline <= t_now:
            return Admission(False, reason="deadline-infeasible")
        if self.price(job, deadline, t_now) > budget:
            return Admission(False, reason="budget-insufficient")
        fits: list[tuple[float, str, ClusterNode]] = []
        for node in self.nodes:
            load = node_load(node, t_now)
            need = required_share(job.length_mi, node.rating_mips, deadline, t_now)
            if load + need <= 1.0:
                fits.append((load, node.id, node))
        if not fits:
            return Admission(False, reason="deadline-infeasible")
        _, _, node = min(fits, key=lambda x: (x[0], x[1]))
        node.jobs.append(LibraJob(
            job=job, deadline=deadline, budget=budget,
            remaining_mi=job.length_mi, admitted_at=t_now,
        ))
        recompute_shares(node, t_now)
        return Admission(True, node=node.id)

    def next_completion(self, node: ClusterNode, t_now: float) -> float | None:
        """Absolute time of the node's next job completion at current shares."""
        if not node.jobs:
            return None
        return min(
            t_now + lj.remaining_mi / (lj.share * node.rating_mips)
            for lj in node.jobs
        )


class ClusterEntity(Entity):
    """Event-driven wrapper running a LibraCluster inside the kernel.

    Completion events carry a per-node epoch; every share recomputation bumps
    the epoch, so events scheduled under an old share assignment are
    recognized as stale and ignored.
    """

    def __init__(self, sim: Simulator, cluster: LibraCluster):
        super().__init__(f"cluster:{cluster.id}")
        self.cluster = cluster
        self._reply_to: dict[str, str] = {}  # job id -> session entity id

    def handle(self, sim: Simulator, event: Event) -> None:
        kind = event.payload.kind
        if kind == "cluster_submit":
            self._submit(sim, event.payload)
        elif kind == "node_done":
            self._completion(sim, event.payload)
        else:
            raise ValueError(f"unknown message kind {kind!r}")

    def _node(self, node_id: str) -> ClusterNode:
        return next(n for n in self.cluster.nodes if n.id == node_id)

    def _sync(self, sim: Simulator, node: ClusterNode) -> None:
        """Advance a node to now, settling any completions on the way."""
        finished = advance(node, sim.now() - node.last_update)
        node.last_update = sim.now()
        if finished:
            self._settle(sim, node, finished)

    def _submit(self, sim: Simulator, msg: Msg) -> None:
        now = sim.now()
        job, deadline, budget, reply_to = msg.data
        for node in self.cluster.nodes:
            self._sync(sim, node)
        admission = self.cluster.admit(job, deadline, budget, now)
        if not admission.accepted:
            sim.schedule_at(now, reply_to,
                            Msg("cluster_reject", job=job.id, value=admission.reason,
                                data=(job, admission)))
            return
        self._reply_to[job.id] = reply_to
        node = self._node(admission.node)
        job.advance_status(JobStatus.DISPATCHED)
        job.advance_status(JobStatus.TRANSFERRING)
        job.advance_status(JobStatus.RUNNING)
        job.start_time = now
        job.assigned_resource = node.id
        self._reschedule(sim, node)

    def _completion(self, sim: Simulator, msg: Msg) -> None:
        node_id, epoch, due = msg.data
        node = self._node(node_id)
        if epoch != node.epoch:
            return  # stale: shares changed since this event was scheduled
        now = sim.now()
        dt = now - node.last_update
        node.last_update = now
        # jobs named in the event complete now by construction; float residue
        # from the advance must not be allowed to postpone them
        finished = []
        survivors = []
        for lj in node.jobs:
            lj.remaining_mi -= lj.share * node.rating_mips * dt
            if lj.job.id in due or lj.remaining_mi <= COMPLETION_EPS_MI:
                lj.remaining_mi = 0.0
                finished.append(lj)
            else:
                survivors.append(lj)
        node.jobs = survivors
        self._settle(sim, node, finished)

    def _settle(self, sim: Simulator, node: ClusterNode,
                finished: list[LibraJob]) -> None:
        now = sim.now()
        if finished:
            recompute_shares(node, now)
            for lj in finished:
                lj.job.finish_time = now
                lj.job.advance_status(JobStatus.DONE)
                sim.schedule_at(now, self._reply_to.pop(lj.job.id),
                                Msg("cluster_done", job=lj.job.id, resource=node.id,
                                    data=(lj, node)))
        self._reschedule(sim, node)

    def _reschedule(self, sim: Simulator, node: ClusterNode) -> None:
        node.epoch += 1
        now = sim.now()
        if not node.jobs:
            return
        times = [
            (now + lj.remaining_mi / (lj.share * node.rating_mips), lj.job.id)
            for lj in node.jobs
        ]
        when = min(t for t, _ in times)
        due = frozenset(jid for t, jid in times if t == when)
        sim.schedule_at(when, self.id,
                        Msg("node_done", resource=node.id,
                            data=(node.id, node.epoch, due)))


class ClusterSession(Entity):
    """Feeds a job set into a Libra cluster and settles the accounting.

    Each job inherits the session deadline and an equal slice of the session
    budget; the cluster's admission price is charged at completion.
    """

    def __init__(self, sim: Simulator, name: str, jobs: list[Job], *, deadline: float,
                 budget: float, consumer: str, cluster_entity: ClusterEntity,
                 bank: GridBank, submit_time: float = 0.0):
        super().__init__(f"session:{name}")
        if not jobs:
            raise ValueError(f"session {name!r} has no jobs")
        self.name = name
        self.jobs = jobs
        self.deadline = deadline
        self.budget = budget
        self.consumer = consumer
        self.cluster_entity = cluster_entity
        self.bank = bank
        self.submit_time = submit_time
        self.report = None
        self.job_costs: dict[str, float] = {}
        self._spent = Fraction(0)
        self._total_cost = 0.0
        self._settled = 0
        self._last_finish = submit_time
        self._failure_reason: str | None = None
        self._per_resource: dict[str, dict] = {}
        self._finished = False

    def handle(self, sim: Simulator, event: Event) -> None:
        kind = event.payload.kind
        if kind == "session_start":
            self._start(sim)
        elif kind == "cluster_reject":
            job, admission = event.payload.data
            self._failure_reason = self._failure_reason or admission.reason
            job.advance_status(JobStatus.FAILED)
            self._settle()
        elif kind == "cluster_done":
            self._charge(sim, event.payload.data)
        else:
            raise ValueError(f"unknown message kind {kind!r}")

    def _start(self, sim: Simulator) -> None:
        now = sim.now()
        for job in self.jobs:
            job.submit_time = now
            job.advance_status(JobStatus.QUEUED)
        if not self.bank.check_credit(self.consumer, self.budget):
            self._failure_reason = "insufficient-credit"
            for job in self.jobs:
                job.advance_status(JobStatus.FAILED)
            self._settled = len(self.jobs)
            self._finalize()
            return
        per_job_budget = self.budget / len(self.jobs)
        committed = Fraction(0)
        cluster = self.cluster_entity.cluster
        for job in self.jobs:
            price = cluster.price(job, self.deadline, now)
            # exact-arithmetic gate: n * (budget/n) can exceed budget in floats
            if committed + Fraction(price) > Fraction(self.budget):
                job.advance_status(JobStatus.FAILED)
                self._failure_reason = self._failure_reason or "budget"
                self._settle()
                continue
            committed += Fraction(price)
            sim.schedule_at(now, self.cluster_entity.id,
                            Msg("cluster_submit", job=job.id,
                                data=(job, self.deadline, per_job_budget, self.id)))

    def _charge(self, sim: Simulator, data) -> None:
        lj, node = data
        now = sim.now()
        job = lj.job
        amount = self.cluster_entity.cluster.price(job, lj.deadline, lj.admitted_at)
        record = UsageRecord(
            consumer=self.consumer,
            provider=self.cluster_entity.cluster.provider_account,
            resource=node.id,
            job=job.id,
            pe_seconds=job.length_mi / node.rating_mips,
            data_mb=0.0,
            amount=amount,
            time=now,
        )
        try:
            self.bank.charge(record)
        except InsufficientFundsError:
            self._failure_reason = self._failure_reason or "charge-failed"
            self._settle()
            return
        self._spent += Fraction(amount)
        self._total_cost += amount
        job.cost_incurred = amount
        self.job_costs[job.id] = amount
        tally = self._per_resource.setdefault(node.id, {"jobs": 0, "cost": 0.0})
        tally["jobs"] += 1
        tally["cost"] += amount
        if now > self._last_finish:
            self._last_finish = now
        self._settle()

    def _settle(self) -> None:
        self._settled += 1
        if self._settled == len(self.jobs):
            self._finalize()

    def _finalize(self) -> None:
        from .broker import BrokerReport  # shared report shape

        done = sum(1 for j in self.jobs if j.status is JobStatus.DONE)
        failed = sum(1 for j in self.jobs if j.status is JobStatus.FAILED)
        self.report = BrokerReport(
            session=self.name,
            jobs_total=len(self.jobs),
            jobs_done=done,
            jobs_failed=failed,
            makespan=self._last_finish - self.submit_time if done else 0.0,
            total_cost=self._total_cost,
            deadline_met=(done == len(self.jobs) and self._last_finish <= self.deadline),
            budget_respected=self._spent <= Fraction(self.budget),
            per_resource=self._per_resource,
            failure_reason=self._failure_reason,
        )
        self._finished = True

    @property
    def finished(self) -> bool:
        return self._finished

    def finalize_partial(self, reason: str = "end-of-simulation") -> None:
        if not self._finished:
            self._failure_reason = self._failure_reason or reason
            self._finalize()

    def job_rows(self) -> list[tuple]:
        """Per-job outcome rows matching the broker session column layout;
        ``resource`` is the cluster node the job ran on."""
        rows = []
        for job in self.jobs:
            charged = job.id in self.job_costs
            rows.append((
                job.id,
                job.assigned_resource or "",
                job.submit_time if job.submit_time is not None else "",
                job.start_time if job.start_time is not None else "",
                job.finish_time if job.finish_time is not None else "",
                job.cost_incurred if charged else "",
                0.0 if charged else "",
                job.status.value,
            ))
        return rows
