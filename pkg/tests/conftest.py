import sys


def pytest_terminal_summary(terminalreporter):
    results = {}
    for mod in list(sys.modules.values()):
        found = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if isinstance(found, dict) and found:
            results.update(found)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        name, ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
