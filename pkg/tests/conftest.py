import re

_ACCEPTANCE = re.compile(r"test_acceptance\.py::test_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Emit one verdict line per numbered acceptance check, visible without -s."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _ACCEPTANCE.search(getattr(rep, "nodeid", ""))
            if m and rep.when == "call":
                num, name = m.groups()
                lines.append((int(num),
                              f"[criterion {num}] {name}: {outcome.upper()[:4]}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
