"""Replica catalog and flat network model.

Logical files have replicas at one or more sites; sites are connected by
direct point-to-point links with a bandwidth and a per-MB price. There is no
multi-hop routing: an absent link means the pair is unreachable. Intra-site
transfers are free and instantaneous.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Objective(str, Enum):
    MIN_TIME = "min_time"
    MIN_COST = "min_cost"


class NoRouteError(Exception):
    """No direct link between the two sites."""


class UnreachableFileError(Exception):
    """No replica of the file is reachable from the destination site."""


@dataclass(frozen=True)
class LogicalFile:
    name: str
    size_mb: float
    replicas: frozenset[str]

    def __post_init__(self):
        if self.size_mb <= 0:
            raise ValueError(f"{self.name}: size_mb must be > 0")
        if not self.replicas:
            raise ValueError(f"{self.name}: needs at least one replica")


@dataclass(frozen=True)
class NetworkLink:
    a: str
    b: str
    bandwidth_mb_s: float
    price_per_mb: float = 0.0

    def __post_init__(self):
        if self.bandwidth_mb_s <= 0:
            raise ValueError(f"link {self.a}-{self.b}: bandwidth must be > 0")
        if self.price_per_mb < 0:
            raise ValueError(f"link {self.a}-{self.b}: price must be >= 0")


@dataclass(frozen=True)
class DataOverhead:
    """Transfer time/cost of staging data from ``source_site`` (None for
    multi-file aggregates)."""

    source_site: str | None
    transfer_time: float
    transfer_cost: float


ZERO_OVERHEAD = DataOverhead(source_site=None, transfer_time=0.0, transfer_cost=0.0)


def transfer_time(size_mb: float, link: NetworkLink | None) -> float:
    """Seconds to move ``size_mb`` over ``link``; None means intra-site."""
    if link is None:
        return 0.0
    return size_mb / link.bandwidth_mb_s

def transfer_cost(size_mb: float, link: NetworkLink | None) -> float:
    if link is None:
        return 0.0
    return size_mb * link.price_per_mb


class ReplicaCatalog:
    """Mapping of logical file names to replica sites plus the link graph."""

    def __init__(self):
        self.files: dict[str, LogicalFile] = {}
        self._links: dict[tuple[str, str], NetworkLink] = {}

    def add_file(self, f: LogicalFile) -> None:
        if f.name in self.files:
            raise ValueError(f"duplicate logical file {f.name!r}")
        self.files[f.name] = f

    def add_replica(self, name: str, site: str) -> None:
        f = self.files[name]
        self.files[name] = LogicalFile(f.name, f.size_mb, f.replicas | {site})

    def add_link(self, link: NetworkLink) -> None:
        key = self._key(link.a, link.b)
        if key in self._links:
            raise ValueError(f"duplicate link {link.a}-{link.b}")
        self._links[key] = link

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def link_between(self, a: str, b: str) -> NetworkLink | None:
        """The direct link between two distinct sites, or None intra-site.

        Raises NoRouteError when the sites are distinct and unlinked.
        """
        if a == b:
            return None
        link = self._links.get(self._key(a, b))
        if link is None:
            raise NoRouteError(f"no link between {a} and {b}")
        return link

    def has_route(self, a: str, b: str) -> bool:
        return a == b or self._key(a, b) in self._links

    def site_transfer(self, size_mb: float, src: str, dst: str) -> tuple[float, float]:
        """(seconds, G$) to move ``size_mb`` from src to dst."""
        link = self.link_between(src, dst)
        return transfer_time(size_mb, link), transfer_cost(size_mb, link)

    def best_replica(self, name: str, dest: str, objective: Objective) -> DataOverhead:
        """Cheapest (MinCost) or fastest (MinTime) reachable replica of ``name``.

        Ties break on the other metric, then on the lowest site id.
        """
        f = self.files.get(name)
        if f is None:
            raise UnreachableFileError(f"unknown logical file {name!r}")
        best: tuple[float, float, str] | None = None
        best_overhead: DataOverhead | None = None
        for site in sorted(f.replicas):
            if not self.has_route(site, dest):
                continue
            t, c = self.site_transfer(f.size_mb, site, dest)
            key = (t, c, site) if objective is Objective.MIN_TIME else (c, t, site)
            if best is None or key < best:
                best = key
                best_overhead = DataOverhead(source_site=site, transfer_time=t, transfer_cost=c)
        if best_overhead is None:
            raise UnreachableFileError(f"no replica of {name!r} reachable from {dest}")
        return best_overhead

    def data_overhead(self, input_files: list[str], dest: str,
                      objective: Objective) -> DataOverhead:
        """Componentwise sum of per-file best replicas staged to ``dest``.

        Transfers are sequential, so times add just like costs.
        """
        total_t = 0.0
        total_c = 0.0
        for name in input_files:
            best = self.best_replica(name, dest, objective)
            total_t += best.transfer_time
            total_c += best.transfer_cost
        return DataOverhead(source_site=None, transfer_time=total_t, transfer_cost=total_c)
