"""A short walk through the Poincare ball used by the embedding space.

Run:  python demos/poincare_tour.py

Three things are shown. Distances blow up as points approach the boundary,
curvature near zero recovers flat space (twice the Euclidean distance), and
mixing two embeddings in the tangent space at the origin always lands back
inside the ball.
"""

import numpy as np

from hidisc import geometry as geo
from hidisc.mixing import tangent_cutmix


def boundary_growth(c=1.0):
    print(f"distance from the origin along a ray (c={c}, boundary at {1 / np.sqrt(c):.3f})")
    origin = np.zeros((1, 2))
    for r in (0.5, 0.9, 0.99, 0.999, 0.9999):
        z = np.array([[r / np.sqrt(c), 0.0]])
        d = geo.distance(origin, z, c)[0]
        print(f"  |z| = {r:<7}  d(0, z) = {d:8.4f}")


def flat_limit():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-0.5, 0.5, size=(2, 5, 3))
    print("\ncurvature -> 0: hyperbolic distance against 2 * Euclidean distance")
    for c in (1.0, 1e-2, 1e-4, 1e-6):
        d = geo.distance(a, b, c)
        e = 2 * np.linalg.norm(a - b, axis=1)
        print(f"  c = {c:<7g} max relative gap {np.max(np.abs(d - e) / e):.2e}")


def mixing(c=0.5):
    rng = np.random.default_rng(1)
    zi = geo.project(rng.standard_normal((4, 3)) * 10, c)  # pushed to the rim
    zj = geo.project(rng.standard_normal((4, 3)) * 10, c)
    lam = rng.uniform(size=4)
    z = tangent_cutmix(zi, zj, lam, c)
    print(f"\ntangent mixing of rim points (c={c}, |z| < {1 / np.sqrt(c):.4f} required)")
    for k in range(4):
        print(
            f"  lam={lam[k]:.2f}  |z_i|={np.linalg.norm(zi[k]):.5f}  |z_j|={np.linalg.norm(zj[k]):.5f}"
            f"  |mix|={np.linalg.norm(z[k]):.5f}"
        )
    assert np.all(c * np.sum(z * z, axis=1) < 1.0)


if __name__ == "__main__":
    boundary_growth()
    flat_limit()
    mixing()
