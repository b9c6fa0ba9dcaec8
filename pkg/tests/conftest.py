"""Prints one pass/fail line per acceptance criterion at the end of each run."""


class _AcceptanceReporter:
    def __init__(self, config):
        self.config = config

    def pytest_runtest_logreport(self, report):
        if report.when != "call" or "test_acceptance" not in report.nodeid:
            return
        terminal = self.config.pluginmanager.get_plugin("terminalreporter")
        if terminal is None:
            return
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        terminal.write_line(f"[acceptance] {name}: {outcome} ({report.duration:.1f}s)")


def pytest_configure(config):
    config.pluginmanager.register(_AcceptanceReporter(config), "acceptance-reporter")
