import pytest

from edgesponsor.harness import Context


@pytest.fixture(scope="session")
def default_ctx() -> Context:
    """Reference parameters with the 10,000-user population at seed 42."""
    return Context.build({})


@pytest.fixture(scope="session")
def default_report(default_ctx):
    from edgesponsor.stage1 import optimize_budgets

    return optimize_budgets(default_ctx.params, default_ctx.catalog, default_ctx.population)


@pytest.fixture(scope="session")
def default_comparison(default_ctx, default_report):
    from edgesponsor.stage1 import compare_schemes

    return compare_schemes(default_ctx.params, default_ctx.catalog, default_ctx.population, report=default_report)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
