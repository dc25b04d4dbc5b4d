"""Closed type system shared by graphs and model heads.

An ontology fixes the event types, entity types, relation types and the
argument roles of every event type.  Index assignment follows declaration
order, so a loaded ontology gives a stable name<->index bijection for the
lifetime of a trained model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable


class OntologyError(ValueError):
    """Malformed or inconsistent ontology source."""


@dataclass(frozen=True)
class Role:
    event_type: str
    name: str
    allowed_entity_types: frozenset[str]


@dataclass(frozen=True)
class Ontology:
    event_types: tuple[str, ...]
    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...]
    role_map: dict[str, tuple[Role, ...]] = field(compare=False)

    def __post_init__(self) -> None:
        for label, names in (
            ("event type", self.event_types),
            ("entity type", self.entity_types),
            ("relation type", self.relation_types),
        ):
            seen: set[str] = set()
            for name in names:
                if not isinstance(name, str) or not name:
                    raise OntologyError(f"invalid {label} name: {name!r}")
                if name in seen:
                    raise OntologyError(f"duplicate {label}: {name!r}")
                seen.add(name)
        known_entities = set(self.entity_types)
        known_events = set(self.event_types)
        for event_type, roles in self.role_map.items():
            if event_type not in known_events:
                raise OntologyError(f"role declared for unknown event type {event_type!r}")
            names = [r.name for r in roles]
            if len(names) != len(set(names)):
                raise OntologyError(f"duplicate role on event type {event_type!r}")
            for role in roles:
                bad = role.allowed_entity_types - known_entities
                if bad:
                    raise OntologyError(
                        f"role {event_type}.{role.name} allows unknown entity types {sorted(bad)}"
                    )
        # every event type gets an entry, possibly empty
        for event_type in self.event_types:
            self.role_map.setdefault(event_type, ())
        object.__setattr__(self, "_event_index", {n: i for i, n in enumerate(self.event_types)})
        object.__setattr__(self, "_entity_index", {n: i for i, n in enumerate(self.entity_types)})
        object.__setattr__(
            self, "_relation_index", {n: i for i, n in enumerate(self.relation_types)}
        )
        role_index: dict[tuple[str, str], int] = {}
        for event_type in self.event_types:
            for role in self.role_map[event_type]:
                role_index[(event_type, role.name)] = len(role_index)
        object.__setattr__(self, "_role_index", role_index)

    # -- sizes -------------------------------------------------------------

    @property
    def num_event_types(self) -> int:
        return len(self.event_types)

    @property
    def num_entity_types(self) -> int:
        return len(self.entity_types)

    @property
    def num_relation_types(self) -> int:
        return len(self.relation_types)

    @property
    def num_roles(self) -> int:
        return len(self._role_index)  # type: ignore[attr-defined]

    @property
    def num_edge_types(self) -> int:
        """Typed non-temporal edge kinds: one per role plus one per relation."""
        return self.num_roles + self.num_relation_types

    # -- lookups -----------------------------------------------------------

    def event_index(self, name: str) -> int:
        try:
            return self._event_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise OntologyError(f"unknown event type {name!r}") from None

    def entity_index(self, name: str) -> int:
        try:
            return self._entity_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise OntologyError(f"unknown entity type {name!r}") from None

    def relation_index(self, name: str) -> int:
        try:
            return self._relation_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise OntologyError(f"unknown relation type {name!r}") from None

    def role_index(self, event_type: str, role: str) -> int:
        """Global index of the event-scoped role ``(event_type, role)``."""
        try:
            return self._role_index[(event_type, role)]  # type: ignore[attr-defined]
        except KeyError:
            raise OntologyError(f"unknown role {event_type}.{role}") from None

    def has_event_type(self, name: str) -> bool:
        return name in self._event_index  # type: ignore[attr-defined]

    def has_entity_type(self, name: str) -> bool:
        return name in self._entity_index  # type: ignore[attr-defined]

    def has_relation_type(self, name: str) -> bool:
        return name in self._relation_index  # type: ignore[attr-defined]

    def roles(self, event_type: str) -> tuple[Role, ...]:
        if event_type not in self._event_index:  # type: ignore[attr-defined]
            raise OntologyError(f"unknown event type {event_type!r}")
        return self.role_map[event_type]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_types": list(self.event_types),
            "entity_types": list(self.entity_types),
            "relation_types": list(self.relation_types),
            "roles": [
                {
                    "event": event_type,
                    "role": role.name,
                    "allowed_entity_types": sorted(role.allowed_entity_types),
                }
                for event_type in self.event_types
                for role in self.role_map[event_type]
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical serialization.

        Two ontology files that declare the same names in the same order share
        a fingerprint even if their whitespace differs.
        """
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def roles_of(ontology: Ontology, event_type: str) -> list[str]:
    """Role names of ``event_type`` in declaration order."""
    return [role.name for role in ontology.roles(event_type)]


def _name_list(data: dict[str, Any], key: str) -> tuple[str, ...]:
    value = data.get(key)
    if not isinstance(value, list):
        raise OntologyError(f"ontology key {key!r} must be a list")
    return tuple(value)


def ontology_from_dict(data: Any) -> Ontology:
    if not isinstance(data, dict):
        raise OntologyError("ontology document must be a mapping")
    event_types = _name_list(data, "event_types")
    entity_types = _name_list(data, "entity_types")
    relation_types = _name_list(data, "relation_types")
    roles_raw = data.get("roles", [])
    if not isinstance(roles_raw, list):
        raise OntologyError("ontology key 'roles' must be a list")
    known_events = set(event_types)
    role_map: dict[str, list[Role]] = {}
    for record in roles_raw:
        if not isinstance(record, dict) or "event" not in record or "role" not in record:
            raise OntologyError(f"malformed role record: {record!r}")
        event_type = record["event"]
        if event_type not in known_events:
            raise OntologyError(
                f"role {record['role']!r} references unknown event type {event_type!r}"
            )
        allowed = record.get("allowed_entity_types", list(entity_types))
        role_map.setdefault(event_type, []).append(
            Role(event_type, record["role"], frozenset(allowed))
        )
    return Ontology(
        event_types=event_types,
        entity_types=entity_types,
        relation_types=relation_types,
        role_map={k: tuple(v) for k, v in role_map.items()},
    )


def load_ontology(source: str) -> Ontology:
    """Parse and validate ontology text (JSON)."""
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        offset = len(source[: exc.pos].encode("utf-8"))
        raise OntologyError(f"ontology parse error at byte offset {offset}: {exc.msg}") from exc
    return ontology_from_dict(data)


def read_ontology(path: str | Path) -> Ontology:
    return load_ontology(Path(path).read_text(encoding="utf-8"))


def make_ontology(
    event_roles: dict[str, Iterable[str | tuple[str, Iterable[str]]]],
    entity_types: Iterable[str],
    relation_types: Iterable[str],
) -> Ontology:
    """Build an ontology in code.

    ``event_roles`` maps each event type to its roles; a role is either a
    bare name (any entity type allowed) or ``(name, allowed_entity_types)``.
    """
    entity_types = tuple(entity_types)
    roles = []
    for event_type, role_specs in event_roles.items():
        for spec in role_specs:
            if isinstance(spec, str):
                name, allowed = spec, entity_types
            else:
                name, allowed = spec
            roles.append({"event": event_type, "role": name, "allowed_entity_types": list(allowed)})
    return ontology_from_dict(
        {
            "event_types": list(event_roles),
            "entity_types": list(entity_types),
            "relation_types": list(relation_types),
            "roles": roles,
        }
    )
