"""Shared pytest wiring.

Prints one PASS/FAIL line per acceptance criterion at the end of the
run so the gate's status is readable without scrolling the full log.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.getreports(outcome):
            if "test_acceptance" not in rep.nodeid:
                continue
            if rep.when != "call" and outcome == "passed":
                continue
            name = rep.nodeid.split("::")[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((name, status))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(set(lines)):
            terminalreporter.write_line(f"[{status}] {name}")
