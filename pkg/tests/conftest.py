import sys


def pytest_terminal_summary(terminalreporter):
    results = {}
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            results.update(getattr(mod, "ACCEPTANCE_RESULTS", {}))
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
