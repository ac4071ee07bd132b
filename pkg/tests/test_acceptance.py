"""The thirteen acceptance criteria, each at its stated tolerance and runtime budget.

Run under pytest for one pass/fail line per criterion in the terminal summary,
or directly with ``python3 tests/test_acceptance.py [N ...]``.
"""

import json
import sys

import pytest

from riskgen.suite import CRITERIA, run_check

# seconds
BUDGETS = {1: 1, 2: 5, 3: 5, 4: 5, 5: 120, 6: 120, 7: 60, 8: 10, 9: 10, 10: 300, 11: 300, 12: 180, 13: 120}


def _line(result):
    budget = BUDGETS[result.number]
    line = result.line()
    if result.passed and result.seconds > budget:
        line = line.replace("[PASS]", "[FAIL]", 1) + f" over the {budget} s budget"
    return line


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_log):
    result = run_check(number)
    acceptance_log.append((number, _line(result)))
    print(_line(result))
    assert result.passed, json.dumps(result.detail, default=float, indent=1)
    assert result.seconds <= BUDGETS[number], f"took {result.seconds:.1f} s, budget {BUDGETS[number]} s"


if __name__ == "__main__":
    numbers = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    failed = 0
    for n in numbers:
        result = run_check(n)
        print(_line(result), flush=True)
        failed += _line(result).startswith("[FAIL]")
    sys.exit(1 if failed else 0)
