import re
import sys

_ran: dict[int, str] = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_(\d+)_", report.nodeid)
    if match and (report.when == "call" or report.outcome != "passed"):
        _ran.setdefault(int(match.group(1)), report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _ran:
        return
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = module.RESULTS if module else {}
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ran):
        if number in results:
            terminalreporter.write_line(results[number][1])
        else:
            terminalreporter.write_line(f"FAIL [{number:2d}] errored before reporting")
