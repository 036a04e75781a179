"""Market directory: providers publish priced services, consumers query them."""

from __future__ import annotations

from dataclasses import dataclass

from .resources import GridResource


class DuplicateEntryError(Exception):
    pass


class UnknownResourceError(KeyError):
    pass


class UnknownEntryError(KeyError):
    pass


@dataclass(frozen=True)
class ServiceEntry:
    provider_account: str
    resource: str
    service_type: str
    apps: frozenset[str]
    base_price: float
    peak_multiplier: float
    published_at: float = 0.0


def entry_for(resource: GridResource, service_type: str = "compute",
              published_at: float = 0.0) -> ServiceEntry:
    """Build an entry whose price summary mirrors the resource's pricing."""
    return ServiceEntry(
        provider_account=resource.provider_account,
        resource=resource.id,
        service_type=service_type,
        apps=frozenset(resource.apps),
        base_price=resource.base_price,
        peak_multiplier=resource.peak_multiplier,
        published_at=published_at,
    )


class MarketDirectory:
    """Registry of live service entries, at most one per (resource, type).

    Queries are metadata operations; ``query_latency`` (simulated seconds) is
    added to the consumer's timeline by whoever performs the lookup.
    """

    def __init__(self, query_latency: float = 0.0):
        self.query_latency = query_latency
        self._known_resources: set[str] = set()
        self._entries: dict[int, ServiceEntry] = {}
        self._next_id = 0

    def register_resource(self, resource_id: str) -> None:
        self._known_resources.add(resource_id)

    def publish(self, entry: ServiceEntry) -> int:
        if entry.resource not in self._known_resources:
            raise UnknownResourceError(entry.resource)
        for live in self._entries.values():
            if live.resource == entry.resource and live.service_type == entry.service_type:
                raise DuplicateEntryError(
                    f"live entry already exists for ({entry.resource}, {entry.service_type})"
                )
        entry_id = self._next_id
        self._next_id += 1
        self._entries[entry_id] = entry
        return entry_id

    def unpublish(self, entry_id: int) -> None:
        if entry_id not in self._entries:
            raise UnknownEntryError(entry_id)
        del self._entries[entry_id]

    def query(self, service_type: str, app: str | None = None,
              max_base_price: float | None = None) -> list[ServiceEntry]:
        """Live entries of ``service_type``, optionally filtered by hosted app
        and base-price ceiling, sorted by (base_price, resource id)."""
        hits = [e for e in self._entries.values() if e.service_type == service_type]
        if app is not None:
            hits = [e for e in hits if app in e.apps]
        if max_base_price is not None:
            hits = [e for e in hits if e.base_price <= max_base_price]
        return sorted(hits, key=lambda e: (e.base_price, e.resource))

    def live_entries(self) -> list[ServiceEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.base_price, e.resource))
