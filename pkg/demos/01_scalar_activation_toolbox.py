"""Tour of the scalar activation layer.

Every nonlinearity used anywhere in the package lives behind one enum, with
its derivative, its first three Hermite projection coefficients, and the
low-order Gaussian moments that the dynamics and the fixed-point solver
consume.  Closed forms are checked here against brute-force Monte Carlo.
"""

import numpy as np

from geqlab.activations import (
    ActivationKind,
    deriv,
    evaluate,
    gaussian_expectation_mc,
    hermite_coefficients,
    i2,
    i3,
    i4,
)


def show_hermite_triples():
    print("Hermite projection coefficients (h1, h2, h3):")
    for kind in ActivationKind:
        h = hermite_coefficients(kind)
        print(f"  {kind.name.lower():8s} {h.h1:+.12f} {h.h2:+.12f} {h.h3:+.12f}")
    print()


def check_integrals_against_mc():
    # a correlated 2x2 / 3x3 / 4x4 covariance family, one draw each
    rng = np.random.default_rng(42)

    def rand_cov(k):
        B = rng.standard_normal((k, k))
        return B @ B.T / k + 0.05 * np.eye(k)

    E = ActivationKind.ERF
    C2, C3, C4 = rand_cov(2), rand_cov(3), rand_cov(4)

    pairs = [
        ("i2 = E[g(x1) g(x2)]", i2(E, C2), C2,
         lambda z: evaluate(E, z[:, 0]) * evaluate(E, z[:, 1])),
        ("i3 = E[g'(x1) x2 g(x3)]", i3(E, C3), C3,
         lambda z: deriv(E, z[:, 0]) * z[:, 1] * evaluate(E, z[:, 2])),
        ("i4 = E[g'(x1) g'(x2) g(x3) g(x4)]", i4(E, C4), C4,
         lambda z: deriv(E, z[:, 0]) * deriv(E, z[:, 1])
         * evaluate(E, z[:, 2]) * evaluate(E, z[:, 3])),
    ]
    print("closed Gaussian moments of the erf unit vs Monte Carlo (n=1e6):")
    for name, closed, C, f in pairs:
        mc, se = gaussian_expectation_mc(f, C, 1_000_000, seed=7)
        print(f"  {name:36s} closed {closed:+.6f}  mc {mc:+.6f} +- {se:.6f}")
    print()


def fully_correlated_pin():
    # both arguments equal: i2 collapses to a 1d integral with a neat value
    C = np.array([[1.0, 1.0], [1.0, 1.0]])
    print(f"i2 at a fully correlated unit pair: {i2(ActivationKind.ERF, C):.15f}"
          f"  (exactly 1/3 = {1 / 3:.15f})")


def main():
    show_hermite_triples()
    check_integrals_against_mc()
    fully_correlated_pin()


if __name__ == "__main__":
    main()
