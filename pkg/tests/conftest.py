from __future__ import annotations

import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    label = getattr(item.function, "acceptance_label", None)
    if label is None:
        return
    status = "PASS" if report.passed else "FAIL"
    line = f"[acceptance] {label}: {status}"
    capman = item.config.pluginmanager.getplugin("capturemanager")
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line)
    else:
        print(line)
