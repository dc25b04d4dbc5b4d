from __future__ import annotations

import pytest

from helpers import toy_graph_, toy_ontology_
from temporal_schema.synth import builtin_ontology


@pytest.fixture
def toy_ontology():
    return toy_ontology_()


@pytest.fixture
def toy_graph(toy_ontology):
    return toy_graph_(toy_ontology)


@pytest.fixture(scope="session")
def ied_ontology():
    return builtin_ontology()


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
