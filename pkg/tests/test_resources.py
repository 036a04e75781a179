"""Grid resources: runtimes, differential pricing, space-shared packing."""

import random

import pytest

from gridecon.resources import (
    GridResource,
    Job,
    JobStatus,
    ResourceState,
    Site,
    compute_cost,
    estimate_completion,
    job_runtime,
    price_at,
    submit_to_resource,
)


def make_resource(**kw):
    args = dict(id="R1", site="s", n_pe=1, pe_rating_mips=100.0, base_price=1.0)
    args.update(kw)
    return GridResource(**args)


def test_job_runtime_examples():
    assert job_runtime(1000.0, 100.0) == 10.0
    assert job_runtime(0.0, 50.0) == 0.0
    assert job_runtime(377.0, 13.0) == 29.0


def test_job_runtime_rejects_bad_rating():
    with pytest.raises(ValueError):
        job_runtime(100.0, 0.0)
    with pytest.raises(ValueError):
        job_runtime(100.0, -5.0)


def test_price_inside_and_outside_peak_window():
    r = make_resource(peak_multiplier=2.0, peak_window=(9.0, 17.0))
    sites = {"s": Site(id="s", utc_offset_hours=0)}
    assert price_at(r, 10 * 3600.0, sites) == 2.0
    assert price_at(r, 20 * 3600.0, sites) == 1.0


def test_price_honours_site_utc_offset():
    # UTC midnight is 10:00 local at +10, inside the peak window
    r = make_resource(peak_multiplier=2.0, peak_window=(9.0, 17.0))
    sites = {"s": Site(id="s", utc_offset_hours=10)}
    assert price_at(r, 0.0, sites) == 2.0


def test_compute_cost_rate_sampled_at_start():
    r = make_resource(peak_multiplier=2.0, peak_window=(9.0, 17.0))
    sites = {"s": Site(id="s", utc_offset_hours=0)}
    job = Job(id="j", length_mi=1000.0)  # 10 s runtime
    assert compute_cost(job, r, 10 * 3600.0, sites) == 20.0
    # started just before the peak window: charged off-peak throughout
    start = 9 * 3600.0 - 5.0
    assert compute_cost(job, r, start, sites) == 10.0


def test_compute_cost_zero_length():
    r = make_resource()
    assert compute_cost(Job(id="j", length_mi=0.0), r, 0.0) == 0.0


def test_fcfs_packing_two_pes():
    r = make_resource(n_pe=2)
    state = ResourceState(r)
    results = [submit_to_resource(state, Job(id=f"j{i}", length_mi=100.0), 0.0)
               for i in range(3)]
    assert results == [(0.0, 1.0), (0.0, 1.0), (1.0, 2.0)]


def test_job_arriving_at_idle_pe_starts_immediately():
    state = ResourceState(make_resource())
    assert submit_to_resource(state, Job(id="j", length_mi=100.0), 5.0) == (5.0, 6.0)


def test_seven_equal_jobs_on_three_pes_makespan():
    # hand-simulated PE timeline: 3+2+2 jobs of 2 s -> last finish at 6 s
    r = make_resource(n_pe=3, pe_rating_mips=100.0)
    state = ResourceState(r)
    finishes = [submit_to_resource(state, Job(id=f"j{i}", length_mi=200.0), 0.0)[1]
                for i in range(7)]
    assert max(finishes) == 6.0


def test_estimate_completion_examples():
    r1 = make_resource(n_pe=1)
    job = Job(id="j", length_mi=100.0)
    assert estimate_completion(r1, 0, job, 0.0) == 1.0
    r2 = make_resource(n_pe=2)
    assert estimate_completion(r2, 3, job, 0.0) == 2.0


def test_estimate_never_exceeds_simulated_finish():
    # static load: the whole backlog is queued at the estimate instant, so
    # the estimator's perfect packing can never beat the simulated finish
    rng = random.Random(20)
    for _ in range(200):
        n_pe = rng.randint(1, 4)
        r = make_resource(n_pe=n_pe, pe_rating_mips=rng.uniform(10, 500))
        state = ResourceState(r)
        backlog = rng.randint(0, 10)
        length = rng.uniform(10, 1000)
        t = rng.uniform(0.0, 50.0)
        for i in range(backlog):
            submit_to_resource(state, Job(id=f"b{i}", length_mi=length), t)
        estimate = estimate_completion(r, backlog, Job(id="j", length_mi=length), t)
        _, finish = submit_to_resource(state, Job(id="j", length_mi=length), t)
        assert estimate <= finish + 1e-9


def test_pe_intervals_never_overlap():
    rng = random.Random(7)
    r = make_resource(n_pe=3, pe_rating_mips=50.0)
    state = ResourceState(r)
    intervals = {pe: [] for pe in range(3)}
    t = 0.0
    for i in range(50):
        t += rng.random() * 2
        runtime = rng.uniform(0.1, 5.0)
        pe, start, end = state.reserve(t, runtime)
        intervals[pe].append((start, end))
    for rows in intervals.values():
        for (s1, e1), (s2, e2) in zip(rows, rows[1:]):
            assert e1 <= s2


def test_status_machine_full_chain():
    job = Job(id="j", length_mi=1.0)
    for status in (JobStatus.QUEUED, JobStatus.DISPATCHED, JobStatus.TRANSFERRING,
                   JobStatus.RUNNING, JobStatus.DONE):
        job.advance_status(status)
    assert job.status is JobStatus.DONE


def test_status_machine_rejects_skips():
    job = Job(id="j", length_mi=1.0)
    with pytest.raises(ValueError):
        job.advance_status(JobStatus.RUNNING)
    job.advance_status(JobStatus.QUEUED)
    with pytest.raises(ValueError):
        job.advance_status(JobStatus.TRANSFERRING)  # skips dispatched


def test_failed_reachable_from_active_but_not_done():
    job = Job(id="j", length_mi=1.0)
    job.advance_status(JobStatus.QUEUED)
    job.advance_status(JobStatus.FAILED)
    done = Job(id="k", length_mi=1.0)
    for status in (JobStatus.QUEUED, JobStatus.DISPATCHED, JobStatus.TRANSFERRING,
                   JobStatus.RUNNING, JobStatus.DONE):
        done.advance_status(status)
    with pytest.raises(ValueError):
        done.advance_status(JobStatus.FAILED)


def test_resource_validation():
    with pytest.raises(ValueError):
        make_resource(n_pe=0)
    with pytest.raises(ValueError):
        make_resource(pe_rating_mips=0.0)
    with pytest.raises(ValueError):
        make_resource(peak_multiplier=0.5)
    with pytest.raises(ValueError):
        make_resource(peak_window=(17.0, 9.0))
