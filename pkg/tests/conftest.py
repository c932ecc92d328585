import time

_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
    terminalreporter.write_line(f"session wall time {time.perf_counter() - _START:.1f} s")
