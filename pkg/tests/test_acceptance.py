"""Acceptance gate: every release criterion at its pinned tolerance.

Each criterion prints one PASS/FAIL line (run pytest with -s or check the
captured output of failures). The checks live in cmdp_lab.verify so the CLI
`verify` subcommand and this module agree on a single definition; heavy
simulation products are cached and shared across criteria within the process.
"""

import pytest

from cmdp_lab import verify


@pytest.mark.parametrize("check", verify.ACCEPTANCE_CHECKS, ids=lambda c: c.__name__)
def test_acceptance_criterion(check):
    result = check()
    print(f"{'PASS' if result.passed else 'FAIL'} {result.name} "
          f"({result.seconds:.1f}s): {result.detail}")
    assert result.passed, f"{result.name}: {result.detail}"


@pytest.mark.parametrize("check", verify.MODULE_CHECKS, ids=lambda c: c.__name__)
def test_module_audit(check):
    result = check()
    print(f"{'PASS' if result.passed else 'FAIL'} {result.name} "
          f"({result.seconds:.1f}s): {result.detail}")
    assert result.passed, f"{result.name}: {result.detail}"
