"""Event schema induction with an autoregressive temporal event graph model."""

from .graph import (
    EOG,
    SOG,
    CycleError,
    GraphError,
    InstanceGraph,
    SchemaGraph,
    add_boundary_nodes,
    graph_from_dict,
    ingest_graph,
    linearize,
    load_corpus,
    prefix_subgraph,
)
from .ontology import Ontology, OntologyError, load_ontology, make_ontology, read_ontology

__version__ = "0.1.0"

__all__ = [
    "EOG",
    "SOG",
    "CycleError",
    "GraphError",
    "InstanceGraph",
    "Ontology",
    "OntologyError",
    "SchemaGraph",
    "add_boundary_nodes",
    "graph_from_dict",
    "ingest_graph",
    "linearize",
    "load_corpus",
    "load_ontology",
    "make_ontology",
    "prefix_subgraph",
    "read_ontology",
]
