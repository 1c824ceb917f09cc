"""
Checking selective p-values under the global null
=================================================

With no signal, p-values computed after selection should be uniform, while
naive p-values on the same data reject far too often.
"""

from phitest import calibration
from phitest.report import render_calibration

# bands are +-2 binomial SD, so one level in about twenty misses by chance
print(render_calibration(calibration.null_p(seed=1)))
print()
print(render_calibration(calibration.coverage(seed=1)))
print()
print(render_calibration(calibration.naive_compare(seed=1)))
