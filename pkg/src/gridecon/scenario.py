"""Scenario files: loading, validation, world assembly, and report output.

A scenario is a TOML file declaring sites, priced resources, network links,
logical files, accounts, published services, Libra clusters, and broker or
cluster sessions. Running a scenario writes ``summary.json``, ``jobs.csv``,
``ledger.csv``, and (with tracing) ``events.csv`` into the output directory.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .bank import GridBank
from .broker import BrokerSession, QoSRequest, Strategy
from .datagrid import LogicalFile, NetworkLink, ReplicaCatalog
from .kernel import Msg, Simulator, TRACE_HEADER
from .libra import ClusterEntity, ClusterNode, ClusterSession, LibraCluster
from .market import MarketDirectory, entry_for
from .resources import GridResource, ResourceState, Site
from .sweep import PlanError, expand, parse_plan

#: Exit codes of ``run_scenario`` / the CLI.
EXIT_OK = 0
EXIT_SESSIONS_INCOMPLETE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_INVARIANT = 4

JOBS_HEADER = ("job", "resource", "submit", "start", "finish",
               "compute_cost", "data_cost", "status")
LEDGER_HEADER = ("time", "job", "consumer", "provider", "resource",
                 "pe_seconds", "data_mb", "amount")


class ScenarioParseError(Exception):
    """File unreadable or structurally not a scenario (exit 2)."""


@dataclass
class SessionSpec:
    name: str
    consumer: str
    home_site: str
    app: str
    strategy: str
    deadline: float
    budget: float
    submit_time: float = 0.0
    reschedule_interval: float = 10.0
    plan_text: str = ""
    default_file_site: str | None = None
    target: str = "grid"  # "grid" or a cluster id
    code_mb: float = 0.0  # stage application code to app-absent resources


@dataclass
class ScenarioData:
    seed: int
    end_time: float
    sites: list[dict]
    resources: list[dict]
    links: list[dict]
    files: list[dict]
    accounts: list[dict]
    services: list[dict]
    clusters: list[dict]
    sessions: list[SessionSpec]
    gmd_query_latency: float = 0.0


def _req(table: dict, key: str, kind, where: str):
    if key not in table:
        raise ScenarioParseError(f"{where}: missing required key {key!r}")
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ScenarioParseError(f"{where}: key {key!r} has wrong type")
    return value


def load_scenario(path: str | Path) -> ScenarioData:
    """Parse a scenario file; schema-level problems raise ScenarioParseError."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioParseError(f"cannot read {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ScenarioParseError(f"{path}: {e}") from None

    sessions = []
    for i, s in enumerate(raw.get("sessions", [])):
        where = f"sessions[{i}]"
        name = _req(s, "name", str, where)
        plan_text = s.get("plan", "")
        plan_file = s.get("plan_file", "")
        if plan_file and plan_text:
            raise ScenarioParseError(f"{where}: give plan or plan_file, not both")
        if plan_file:
            plan_path = path.parent / plan_file
            try:
                plan_text = plan_path.read_text(encoding="utf-8")
            except OSError as e:
                raise ScenarioParseError(f"{where}: cannot read plan {plan_path}: {e}") from None
        if not plan_text:
            raise ScenarioParseError(f"{where}: needs plan or plan_file")
        sessions.append(SessionSpec(
            name=name,
            consumer=_req(s, "consumer", str, where),
            home_site=_req(s, "home_site", str, where),
            app=s.get("app", ""),
            strategy=s.get("strategy", "cost"),
            deadline=_req(s, "deadline", float, where),
            budget=_req(s, "budget", float, where),
            submit_time=float(s.get("submit_time", 0.0)),
            reschedule_interval=float(s.get("reschedule_interval", 10.0)),
            plan_text=plan_text,
            default_file_site=s.get("default_file_site"),
            target=s.get("target", "grid"),
            code_mb=float(s.get("code_mb", 0.0)),
        ))

    gmd = raw.get("gmd", {})
    return ScenarioData(
        seed=int(raw.get("seed", 0)),
        end_time=_req(raw, "end_time", float, "scenario"),
        sites=raw.get("sites", []),
        resources=raw.get("resources", []),
        links=raw.get("links", []),
        files=raw.get("files", []),
        accounts=raw.get("accounts", []),
        services=raw.get("services", []),
        clusters=raw.get("clusters", []),
        sessions=sessions,
        gmd_query_latency=float(gmd.get("query_latency", 0.0)),
    )


def validate_scenario_data(data: ScenarioData) -> list[str]:
    """All cross-reference, range, and plan problems; empty means runnable."""
    findings: list[str] = []

    def dup_check(items, key, label):
        seen = set()
        for item in items:
            ident = item.get(key) if isinstance(item, dict) else getattr(item, key)
            if ident in seen:
                findings.append(f"duplicate {label} {ident!r}")
            seen.add(ident)
        return seen

    site_ids = dup_check(data.sites, "id", "site")
    account_ids = dup_check(data.accounts, "owner", "account")
    resource_ids = dup_check(data.resources, "id", "resource")
    cluster_ids = dup_check(data.clusters, "id", "cluster")
    dup_check(data.sessions, "name", "session")

    if data.end_time <= 0:
        findings.append(f"end_time must be > 0, got {data.end_time}")

    for a in data.accounts:
        if a.get("balance", 0) < 0:
            findings.append(f"account {a.get('owner')!r} has negative balance")

    for r in data.resources:
        rid = r.get("id", "?")
        if r.get("site") not in site_ids:
            findings.append(f"resource {rid!r} references unknown site {r.get('site')!r}")
        if r.get("provider_account") not in account_ids:
            findings.append(
                f"resource {rid!r} references unknown account {r.get('provider_account')!r}")
        try:
            _build_resource(r)
        except (ValueError, TypeError, KeyError) as e:
            findings.append(f"resource {rid!r}: {e}")

    seen_pairs = set()
    for ln in data.links:
        a, b = ln.get("a"), ln.get("b")
        for end in (a, b):
            if end not in site_ids:
                findings.append(f"link {a}-{b} references unknown site {end!r}")
        if a == b:
            findings.append(f"link {a}-{b} connects a site to itself")
        pair = tuple(sorted((str(a), str(b))))
        if pair in seen_pairs:
            findings.append(f"duplicate link {a}-{b}")
        seen_pairs.add(pair)
        if ln.get("bandwidth_mb_s", 0) <= 0:
            findings.append(f"link {a}-{b} has nonpositive bandwidth")
        if ln.get("price_per_mb", 0) < 0:
            findings.append(f"link {a}-{b} has negative price")

    file_names = dup_check(data.files, "name", "file")
    for f in data.files:
        if f.get("size_mb", 0) <= 0:
            findings.append(f"file {f.get('name')!r} has nonpositive size")
        replicas = f.get("replicas", [])
        if not replicas:
            findings.append(f"file {f.get('name')!r} has no replicas")
        for site in replicas:
            if site not in site_ids:
                findings.append(f"file {f.get('name')!r} replica at unknown site {site!r}")

    seen_services = set()
    for sv in data.services:
        rid = sv.get("resource")
        stype = sv.get("service_type", "compute")
        if rid not in resource_ids:
            findings.append(f"service entry references unknown resource {rid!r}")
        if (rid, stype) in seen_services:
            findings.append(f"duplicate service entry for ({rid}, {stype})")
        seen_services.add((rid, stype))

    for c in data.clusters:
        cid = c.get("id", "?")
        if c.get("provider_account") not in account_ids:
            findings.append(
                f"cluster {cid!r} references unknown account {c.get('provider_account')!r}")
        nodes = c.get("nodes", [])
        if not nodes:
            findings.append(f"cluster {cid!r} declares no nodes")
        for n in nodes:
            if n.get("rating_mips", 0) <= 0:
                findings.append(f"cluster {cid!r} node {n.get('id')!r} has nonpositive rating")

    if not data.sessions:
        findings.append("scenario declares no sessions")

    for spec in data.sessions:
        where = f"session {spec.name!r}"
        if spec.consumer not in account_ids:
            findings.append(f"{where}: unknown consumer account {spec.consumer!r}")
        if spec.home_site not in site_ids:
            findings.append(f"{where}: unknown home site {spec.home_site!r}")
        if spec.budget <= 0:
            findings.append(f"{where}: budget must be > 0, got {spec.budget}")
        if spec.deadline <= spec.submit_time:
            findings.append(
                f"{where}: deadline {spec.deadline} not after submit time {spec.submit_time}")
        if spec.target != "grid" and spec.target not in cluster_ids:
            findings.append(f"{where}: unknown target cluster {spec.target!r}")
        if spec.target == "grid":
            try:
                Strategy(spec.strategy)
            except ValueError:
                findings.append(f"{where}: unknown strategy {spec.strategy!r}")
        if spec.default_file_site is not None and spec.default_file_site not in site_ids:
            findings.append(
                f"{where}: unknown default file site {spec.default_file_site!r}")
        try:
            plan = parse_plan(spec.plan_text)
            jobset = expand(plan)
        except PlanError as e:
            findings.append(f"{where}: plan error: {e}")
            continue
        if not jobset.jobs:
            findings.append(f"{where}: plan expands to no jobs")
        if spec.target == "grid" and spec.default_file_site is None:
            for name in sorted(jobset.file_sizes):
                if name not in file_names:
                    findings.append(
                        f"{where}: input file {name!r} is not in the replica catalog "
                        f"and no default_file_site is set")
    return findings


def validate_scenario(path: str | Path) -> list[str]:
    """Validation report for a scenario file without running it."""
    return validate_scenario_data(load_scenario(path))


def _build_resource(r: dict) -> GridResource:
    window = r.get("peak_window")
    return GridResource(
        id=r["id"],
        site=r["site"],
        n_pe=int(r.get("n_pe", 1)),
        pe_rating_mips=float(r["pe_rating_mips"]),
        base_price=float(r["base_price"]),
        peak_multiplier=float(r.get("peak_multiplier", 1.0)),
        peak_window=(float(window[0]), float(window[1])) if window else None,
        provider_account=r.get("provider_account", ""),
        apps=set(r.get("apps", [])),
    )


@dataclass
class World:
    sim: Simulator
    sites: dict[str, Site]
    resources: dict[str, GridResource]
    states: dict[str, ResourceState]
    catalog: ReplicaCatalog
    market: MarketDirectory
    bank: GridBank
    clusters: dict[str, ClusterEntity]
    sessions: list
    end_time: float
    initial_credit: Fraction = Fraction(0)


def build_world(data: ScenarioData, *, seed: int | None = None, trace: bool = False,
                strategy_override: str | None = None) -> World:
    """Assemble entities from validated scenario data and queue the sessions."""
    sim = Simulator(seed=data.seed if seed is None else seed, tracing=trace)

    sites = {s["id"]: Site(id=s["id"], name=s.get("name", ""),
                           utc_offset_hours=int(s.get("utc_offset_hours", 0)))
             for s in data.sites}

    catalog = ReplicaCatalog()
    for f in data.files:
        catalog.add_file(LogicalFile(name=f["name"], size_mb=float(f["size_mb"]),
                                     replicas=frozenset(f["replicas"])))
    for ln in data.links:
        catalog.add_link(NetworkLink(a=ln["a"], b=ln["b"],
                                     bandwidth_mb_s=float(ln["bandwidth_mb_s"]),
                                     price_per_mb=float(ln.get("price_per_mb", 0.0))))

    bank = GridBank()
    for a in data.accounts:
        bank.open_account(a["owner"], float(a.get("balance", 0.0)))

    market = MarketDirectory(query_latency=data.gmd_query_latency)
    resources = {}
    states = {}
    for r in data.resources:
        resource = _build_resource(r)
        resources[resource.id] = resource
        states[resource.id] = ResourceState(resource)
        market.register_resource(resource.id)
    for sv in data.services:
        market.publish(entry_for(resources[sv["resource"]],
                                 service_type=sv.get("service_type", "compute")))

    clusters = {}
    for c in data.clusters:
        nodes = [ClusterNode(id=n["id"], rating_mips=float(n["rating_mips"]))
                 for n in c["nodes"]]
        cluster = LibraCluster(
            cluster_id=c["id"], nodes=nodes,
            alpha=float(c.get("alpha", 0.01)), beta=float(c.get("beta", 1.0)),
            provider_account=c.get("provider_account", ""),
        )
        entity = ClusterEntity(sim, cluster)
        clusters[c["id"]] = entity
        sim.add_entity(entity)

    sessions = []
    for spec in data.sessions:
        plan = parse_plan(spec.plan_text)
        jobset = expand(plan, id_prefix=f"{spec.name}-")
        if spec.default_file_site is not None:
            for name, size in sorted(jobset.file_sizes.items()):
                if name not in catalog.files:
                    catalog.add_file(LogicalFile(name=name, size_mb=size,
                                                 replicas=frozenset([spec.default_file_site])))
        if spec.target == "grid":
            strategy = Strategy(strategy_override or spec.strategy)
            qos = QoSRequest(deadline=spec.deadline, budget=spec.budget,
                             strategy=strategy, consumer=spec.consumer,
                             home_site=spec.home_site, app=spec.app,
                             code_mb=spec.code_mb)
            session = BrokerSession(
                sim, spec.name, jobset.jobs, qos,
                market=market, resources=resources, states=states,
                catalog=catalog, sites=sites, bank=bank,
                submit_time=spec.submit_time,
                reschedule_interval=spec.reschedule_interval,
            )
        else:
            session = ClusterSession(
                sim, spec.name, jobset.jobs,
                deadline=spec.deadline, budget=spec.budget, consumer=spec.consumer,
                cluster_entity=clusters[spec.target], bank=bank,
                submit_time=spec.submit_time,
            )
        sessions.append(session)
        sim.add_entity(session)
        sim.schedule_at(spec.submit_time, session.id, Msg("session_start"))

    return World(sim=sim, sites=sites, resources=resources, states=states,
                 catalog=catalog, market=market, bank=bank, clusters=clusters,
                 sessions=sessions, end_time=data.end_time,
                 initial_credit=bank.total_credit())


def run_world(world: World) -> dict:
    """Run to the scenario horizon and assemble the summary dictionary."""
    t0 = time.perf_counter()
    stats = world.sim.run_until(world.end_time)
    runtime_ms = (time.perf_counter() - t0) * 1000.0

    reports = []
    for session in world.sessions:
        session.finalize_partial()
        reports.append(session.report)

    conservation_ok = world.bank.total_credit() == world.initial_credit
    return {
        "sessions": [
            {
                "name": r.session,
                "jobs_total": r.jobs_total,
                "jobs_done": r.jobs_done,
                "jobs_failed": r.jobs_failed,
                "makespan": r.makespan,
                "total_cost": r.total_cost,
                "deadline_met": r.deadline_met,
                "budget_respected": r.budget_respected,
                "per_resource": r.per_resource,
                "failure_reason": r.failure_reason,
            }
            for r in reports
        ],
        "conservation_ok": conservation_ok,
        "events": stats.events_delivered,
        "runtime_ms": runtime_ms,
    }


def write_outputs(world: World, summary: dict, out_dir: str | Path,
                  trace: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    with open(out / "jobs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JOBS_HEADER)
        for session in world.sessions:
            w.writerows(session.job_rows())

    with open(out / "ledger.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        for txn in world.bank.ledger:
            rec = txn.record
            w.writerow((rec.time, rec.job, rec.consumer, rec.provider,
                        rec.resource, rec.pe_seconds, rec.data_mb, rec.amount))

    if trace:
        with open(out / "events.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            w.writerows(world.sim.trace_rows)


def check_invariants(world: World, summary: dict) -> list[str]:
    """Post-run structural checks; any entry means exit code 4."""
    problems = []
    if not summary["conservation_ok"]:
        problems.append("bank conservation violated")
    charged_jobs = [t.record.job for t in world.bank.ledger]
    if len(charged_jobs) != len(set(charged_jobs)):
        problems.append("a job was charged more than once")
    total_done = 0
    for session, report in zip(world.sessions, summary["sessions"]):
        if not report["budget_respected"]:
            problems.append(f"session {report['name']!r} overspent its budget")
        rows = session.job_rows()
        if len(rows) != report["jobs_total"]:
            problems.append(f"session {report['name']!r} job row count mismatch")
        total_done += report["jobs_done"]
    if len(charged_jobs) != total_done:
        problems.append(
            f"{len(charged_jobs)} usage records for {total_done} finished jobs")
    return problems


def run_scenario(path: str | Path, out_dir: str | Path = "out", *,
                 seed: int | None = None, trace: bool = False,
                 strategy: str | None = None) -> tuple[int, dict]:
    """Load, validate, run, and write artifacts; returns (exit_code, summary)."""
    try:
        data = load_scenario(path)
    except ScenarioParseError as e:
        return EXIT_PARSE, {"error": str(e)}
    findings = validate_scenario_data(data)
    if findings:
        return EXIT_VALIDATION, {"error": "validation failed", "findings": findings}
    if strategy is not None:
        try:
            Strategy(strategy)
        except ValueError:
            return EXIT_VALIDATION, {"error": f"unknown strategy {strategy!r}",
                                     "findings": [f"unknown strategy {strategy!r}"]}
    world = build_world(data, seed=seed, trace=trace, strategy_override=strategy)
    summary = run_world(world)
    write_outputs(world, summary, out_dir, trace=trace)

    problems = check_invariants(world, summary)
    if problems:
        summary["error"] = "; ".join(problems)
        return EXIT_INVARIANT, summary
    incomplete = [
        s["name"] for s in summary["sessions"]
        if s["jobs_done"] != s["jobs_total"]
    ]
    if incomplete:
        summary["error"] = f"sessions with unfinished jobs: {', '.join(incomplete)}"
        return EXIT_SESSIONS_INCOMPLETE, summary
    return EXIT_OK, summary
