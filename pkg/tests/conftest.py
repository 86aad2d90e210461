import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
  """Records one PASS/FAIL line per acceptance criterion."""
  def emit(number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
  return emit


def pytest_terminal_summary(terminalreporter):
  if _ACCEPTANCE_LINES:
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
      terminalreporter.write_line(line)
