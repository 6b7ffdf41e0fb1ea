def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts in one block at the end of the run."""
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
