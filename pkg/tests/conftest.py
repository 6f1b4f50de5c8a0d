import re

CRITERIA = {
    "c1": "PG sampler moments",
    "c2": "conjugacy oracles",
    "c3": "small-instance exactness",
    "c4": "Geweke joint-distribution test",
    "c5": "directional imputation claim",
    "c6": "metric panel over seeds",
    "c7": "augmentation ESS gain",
    "c8": "preprocessing regression",
    "c9": "fit determinism",
}


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error", "xfailed"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_(c\d)_", getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome != "error"):
                continue
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            verdict = {"passed": "PASS", "xfailed": "FAIL (known)"}.get(outcome, "FAIL")
            lines[m.group(1)] = f"{m.group(1).upper()} {verdict}  {CRITERIA[m.group(1)]}" + (
                f"  ({detail})" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=lambda k: int(k[1:])):
            terminalreporter.write_line(lines[key])
