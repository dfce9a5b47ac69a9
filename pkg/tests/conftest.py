from hypothesis import HealthCheck, settings

settings.register_profile(
    "autows", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("autows")


def pytest_terminal_summary(terminalreporter):
    from instances import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
