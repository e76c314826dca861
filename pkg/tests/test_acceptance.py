"""Acceptance suite: one test per criterion, each printing its verdict line.

Criteria with a stated runtime budget assert it as well.  The heavy
convergence experiment (criterion 7) runs once per session.
"""

import pytest

from ergodiff import selftest


def _run(number, budget_s=None):
    result = selftest.CRITERIA[number]()
    print()
    print(result.summary_line())
    for line in result.details:
        print("      " + line)
    assert result.passed, "; ".join(result.failures)
    if budget_s is not None:
        assert result.runtime_s < budget_s, (
            f"criterion {number} took {result.runtime_s:.1f}s, budget {budget_s}s")
    return result


def test_criterion_1_rotation_average_oracle():
    _run(1, budget_s=5.0)


def test_criterion_2_gyro_average_oracle():
    _run(2, budget_s=30.0)


def test_criterion_3_group_property_suite():
    _run(3, budget_s=60.0)


def test_criterion_4_average_property_suite():
    _run(4)


def test_criterion_5_corrector_closure():
    _run(5)


def test_criterion_6_solver_energy_identities():
    _run(6)


@pytest.mark.slow
def test_criterion_7_convergence_experiment():
    _run(7, budget_s=600.0)


def test_criterion_8_two_scale_pairing():
    _run(8, budget_s=120.0)


def test_criterion_9_filtered_stiff_equivalence():
    _run(9)
