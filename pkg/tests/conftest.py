import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None and report.when == "call":
        report.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for status in ("passed", "failed"):
        for rep in terminalreporter.stats.get(status, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            crit = props.get("criterion")
            if crit is not None:
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append((crit, verdict, rep.nodeid, props.get("measured", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, verdict, nodeid, measured in sorted(lines, key=lambda x: int(x[0][2:])):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{crit:>5}  {verdict}  {name}  {measured}".rstrip())
