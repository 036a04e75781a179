"""Priced computational resources and space-shared job execution.

A grid resource is a set of identical processing elements (PEs) at a site,
sold at a base price per PE-second with an optional daily peak window during
which the price is multiplied. Jobs are sequential (one PE each) and are
packed FCFS onto the earliest-free PE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class JobStatus(str, Enum):
    CREATED = "created"
    QUEUED = "queued"
    DISPATCHED = "dispatched"
    TRANSFERRING = "transferring"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


_NEXT_STATUS = {
    JobStatus.CREATED: JobStatus.QUEUED,
    JobStatus.QUEUED: JobStatus.DISPATCHED,
    JobStatus.DISPATCHED: JobStatus.TRANSFERRING,
    JobStatus.TRANSFERRING: JobStatus.RUNNING,
    JobStatus.RUNNING: JobStatus.DONE,
}

_TERMINAL = (JobStatus.DONE, JobStatus.FAILED)


@dataclass
class Site:
    id: str
    name: str = ""
    utc_offset_hours: int = 0

    def __post_init__(self):
        if not -12 <= self.utc_offset_hours <= 14:
            raise ValueError(f"utc_offset_hours out of range: {self.utc_offset_hours}")


@dataclass
class GridResource:
    id: str
    site: str
    n_pe: int
    pe_rating_mips: float
    base_price: float
    peak_multiplier: float = 1.0
    peak_window: tuple[float, float] | None = None  # [start_hour, end_hour) local
    provider_account: str = ""
    apps: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.n_pe < 1:
            raise ValueError(f"{self.id}: n_pe must be >= 1")
        if self.pe_rating_mips <= 0:
            raise ValueError(f"{self.id}: pe_rating_mips must be > 0")
        if self.base_price < 0:
            raise ValueError(f"{self.id}: base_price must be >= 0")
        if self.peak_multiplier < 1:
            raise ValueError(f"{self.id}: peak_multiplier must be >= 1")
        if self.peak_window is not None:
            lo, hi = self.peak_window
            if not 0 <= lo < hi <= 24:
                raise ValueError(f"{self.id}: peak_window must satisfy 0 <= start < end <= 24")


@dataclass
class Job:
    id: str
    length_mi: float
    input_files: list[str] = field(default_factory=list)
    output_mb: float = 0.0
    status: JobStatus = JobStatus.CREATED
    assigned_resource: str | None = None
    submit_time: float | None = None
    start_time: float | None = None
    finish_time: float | None = None
    cost_incurred: float = 0.0

    def advance_status(self, new: JobStatus) -> None:
        """Move to ``new``, enforcing the lifecycle state machine.

        The forward chain is created -> queued -> dispatched -> transferring
        -> running -> done, one step at a time; FAILED is reachable from any
        non-terminal state.
        """
        if new == JobStatus.FAILED:
            if self.status in _TERMINAL:
                raise ValueError(f"{self.id}: cannot fail from {self.status.value}")
        elif _NEXT_STATUS.get(self.status) != new:
            raise ValueError(
                f"{self.id}: illegal transition {self.status.value} -> {new.value}"
            )
        self.status = new


def job_runtime(length_mi: float, pe_rating_mips: float) -> float:
    """Seconds one PE needs for ``length_mi`` million instructions."""
    if pe_rating_mips <= 0:
        raise ValueError(f"pe_rating_mips must be > 0, got {pe_rating_mips}")
    if length_mi < 0:
        raise ValueError(f"length_mi must be >= 0, got {length_mi}")
    return length_mi / pe_rating_mips


def local_hour(t: float, utc_offset_hours: int) -> float:
    """Local time of day in hours for simulated second ``t`` (t=0 is UTC midnight)."""
    return (t / 3600.0 + utc_offset_hours) % 24.0


def price_at(resource: GridResource, t: float, sites: dict[str, Site] | None = None) -> float:
    """G$ per PE-second at time ``t``, applying the peak multiplier when the
    site's local time of day falls inside the resource's peak window.

    ``sites`` maps site ids to Site records; without it the site is assumed
    to sit at UTC.
    """
    if resource.peak_window is None:
        return resource.base_price
    offset = 0
    if sites is not None and resource.site in sites:
        offset = sites[resource.site].utc_offset_hours
    lo, hi = resource.peak_window
    if lo <= local_hour(t, offset) < hi:
        return resource.base_price * resource.peak_multiplier
    return resource.base_price


def compute_cost(job: Job, resource: GridResource, start: float,
                 sites: dict[str, Site] | None = None) -> float:
    """Compute charge for running ``job`` starting at ``start``.

    The rate is sampled once at the start time and held for the whole job,
    so a job straddling a peak boundary pays its start-time rate throughout.
    """
    return job_runtime(job.length_mi, resource.pe_rating_mips) * price_at(resource, start, sites)


class ResourceState:
    """Space-shared FCFS bookkeeping: one next-free-time per PE.

    Slots are committed at dispatch time, which makes every later start and
    finish a pure function of the dispatch order; completions merely fire
    events at the precomputed times.
    """

    def __init__(self, resource: GridResource):
        self.resource = resource
        self.pe_free = [0.0] * resource.n_pe

    def peek(self, arrival: float, busy_seconds: float) -> tuple[int, float, float]:
        """The (pe, start, end) the next reservation would get, without committing."""
        pe = min(range(len(self.pe_free)), key=lambda i: self.pe_free[i])
        start = max(arrival, self.pe_free[pe])
        return pe, start, start + busy_seconds

    def reserve(self, arrival: float, busy_seconds: float) -> tuple[int, float, float]:
        pe, start, end = self.peek(arrival, busy_seconds)
        self.pe_free[pe] = end
        return pe, start, end

    def snapshot(self) -> list[float]:
        return list(self.pe_free)


def submit_to_resource(state: ResourceState, job: Job, arrival: float) -> tuple[float, float]:
    """Place ``job`` on the earliest-free PE; returns (start, finish)."""
    runtime = job_runtime(job.length_mi, state.resource.pe_rating_mips)
    _, start, finish = state.reserve(arrival, runtime)
    return start, finish


def estimate_completion(resource: GridResource, backlog_jobs: int, job: Job, t: float) -> float:
    """Planning estimate of when ``job`` finishes behind ``backlog_jobs``
    equal pending jobs on an otherwise idle resource. Never later than the
    simulated finish under FCFS packing for homogeneous jobs.
    """
    if backlog_jobs < 0:
        raise ValueError("backlog_jobs must be >= 0")
    rounds = math.ceil((backlog_jobs + 1) / resource.n_pe)
    return t + rounds * job_runtime(job.length_mi, resource.pe_rating_mips)
