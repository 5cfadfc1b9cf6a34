import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        passed, detail, elapsed = results[key]
        terminalreporter.write_line(
            f"criterion {key}: {'PASS' if passed else 'FAIL'} ({elapsed:.1f} s) {detail}")
