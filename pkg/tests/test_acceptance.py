"""Acceptance criteria at full size, one test and one printed verdict line each.

Run alone with ``pytest tests/test_acceptance.py -v`` or as a script with
``python tests/test_acceptance.py``. Expect about 20 minutes on one core.
"""
import sys

import pytest

from rareclusters.acceptance import CRITERIA, FULL

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda c: f"criterion_{c.number:02d}")
def test_criterion(criterion, capsys):
    res = criterion(FULL)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


if __name__ == "__main__":
    from rareclusters.acceptance import run_suite

    results = run_suite(FULL)
    sys.exit(0 if all(r.passed for r in results) else 1)
