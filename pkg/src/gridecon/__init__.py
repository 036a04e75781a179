"""Deterministic discrete-event simulator for economy-driven utility grids.

Providers publish priced compute services to a market directory; a broker
schedules parameter-sweep jobs under deadline and budget constraints across
priced resources and replicated data; an accounting bank meters and settles
every job; a proportional-share cluster scheduler handles the intra-cluster
economy. Scenario files drive the whole thing reproducibly.
"""

from .bank import GridBank, Transaction, UsageRecord
from .broker import (
    BrokerReport,
    BrokerSession,
    CandidateResource,
    QoSRequest,
    SchedulePlan,
    Strategy,
    discover,
    run_session,
    schedule_cost_opt,
    schedule_cost_time,
    schedule_time_opt,
)
from .datagrid import (
    DataOverhead,
    LogicalFile,
    NetworkLink,
    Objective,
    ReplicaCatalog,
)
from .kernel import Entity, Event, Msg, RunStats, SeededRng, Simulator
from .libra import (
    ClusterNode,
    LibraCluster,
    LibraJob,
    advance,
    recompute_shares,
    required_share,
)
from .market import MarketDirectory, ServiceEntry, entry_for
from .resources import (
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
from .scenario import run_scenario, validate_scenario
from .sweep import JobSet, Plan, expand, parse_plan, render_plan

__version__ = "0.1.0"
