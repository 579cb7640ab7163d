"""Group actions on grids and points, axiom checks, and frame averaging.

Walks through the built-in isometry groups, shows what each element does
to a small labelled grid, verifies the group axioms numerically, and then
turns an arbitrary MLP into an exactly equivariant score field by frame
averaging.  Everything prints; no files are written.
"""

import numpy as np

from spdm.groups import (frame_average, make_c4_group, make_d4_group,
                         make_flip_group, make_point_group_2d,
                         verify_group_axioms)
from spdm.nets import Mlp

rng = np.random.default_rng(0)

# ---- what the grid actions do -------------------------------------------

print("=== grid actions on a labelled 2x2 image ===")
img = np.array([[1.0, 2.0], [3.0, 4.0]])
c4 = make_c4_group((2, 2))
for el in c4.elements:
    print(f"{el.name}:")
    print(el.apply(img))

flip = make_flip_group("vertical", (2, 2))
print("vertical flip:")
print(flip.elements[1].apply(img))

# ---- point actions are orthogonal matrices ------------------------------

print("\n=== point-form C4: quarter-turn matrices ===")
p4 = make_point_group_2d(4)
for el in p4.elements:
    print(f"{el.name}: {el.matrix.ravel()}")

# ---- axioms -------------------------------------------------------------

print("\n=== axiom checks ===")
for group in (flip, c4, make_d4_group((4, 4)), p4,
              make_point_group_2d(4, with_reflection=True)):
    rep = verify_group_axioms(group)
    print(f"{group.name}: passed={rep.passed} "
          f"orthogonality err {rep.max_orthogonality_error:.1e}")

# ---- frame averaging ----------------------------------------------------

print("\n=== frame averaging an arbitrary MLP ===")
net = Mlp(2, hidden=(32, 32), seed=3)
wrapped = frame_average(net, p4)

x = rng.standard_normal((5, 2))
t = 0.4
k = p4.elements[1]


def gap(field):
    return float(np.max(np.abs(field(k.apply(x), t) - k.apply(field(x, t)))))


print(f"raw net equivariance gap under r1:      {gap(net):.3f}")
print(f"frame-averaged gap under r1:            {gap(wrapped):.2e}")
print("averaging over the group makes any field exactly equivariant;")
print("the residual is float roundoff only.")
