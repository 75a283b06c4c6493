"""Run the finite-difference suite and print one line per check.

The same thing is available as ``msanet gradcheck``; the full-model check is
the slow one.

    python demos/gradient_checks.py
"""
from msanet.gradsuite import run_suite


def show(res):
    flag = "ok  " if res.passed else "FAIL"
    refined = sum(res.report.straddled.values())
    print(f"{flag} {res.name:<28} {res.report.max_error:.1e}  (refined probes: {refined})")


results = run_suite(seed=0, progress=show)
print(f"{sum(r.passed for r in results)}/{len(results)} passed")
