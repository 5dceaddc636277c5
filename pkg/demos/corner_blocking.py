"""Where the corner-vanishing induction stops.

For rational dihedral angles q/p the order-N systems become singular at
order p (an angle resonance). Irrational angles certify every order up to
the target, unless the impedances sit on the degenerate curve.
"""

import math
from fractions import Fraction

from cornerscat.eigencorner import CornerData, certify_vanishing

TARGET = 12

print(f"{'alpha':>10}  certified  blocking")
for alpha in (Fraction(1, 2), Fraction(1, 3), Fraction(2, 5), Fraction(3, 7), Fraction(5, 11)):
    r = certify_vanishing(CornerData(alpha), TARGET)
    print(f"{str(alpha):>10}  {r.certified_order:9d}  {r.blocking}")

for alpha in (1 / math.sqrt(2), math.pi / 7 / math.e):
    r = certify_vanishing(CornerData(alpha), TARGET)
    print(f"{alpha:10.6f}  {r.certified_order:9d}  {r.blocking}")

# impedances on the degenerate curve 2 eta1 cos(phi0) + eta2 (1 + cos 2 phi0) = 0
r = certify_vanishing(CornerData(0.25, 1, -math.sqrt(2)), TARGET)
print(f"{0.25:10.6f}  {r.certified_order:9d}  {r.blocking}  (eta2 = -sqrt(2))")
