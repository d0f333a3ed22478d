import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qconf.domains import CuspDomain, Diamond, Disk, PaperTriangle, Rect, UnitSquare
from qconf.errors import ParameterError, PoleError, UnsupportedMapError
from qconf.mappings import Affine, HolderCusp, Identity, Mapping, RadialSquareDisk
from qconf.quadrature import (
    cell_averages,
    composition_norm_bound,
    conjugate_kappa,
    cusp_k_squared,
    h_norm_bound,
    integrate,
    sup_functional,
)


def cusp_field(alpha):
    return lambda x, y: (1 / alpha) * y ** (1 - alpha) + alpha * y ** (alpha - 1)


def test_constant_over_unit_square():
    res = integrate(lambda x, y: np.ones_like(x), UnitSquare())
    np.testing.assert_allclose(res.value, 1.0, rtol=1e-12)
    assert res.error_estimate <= 1e-12
    assert res.converged and not res.divergent


@pytest.mark.parametrize(
    "domain, area",
    [(Diamond(), 2.0), (Disk(0.5, 1.0, -1.0), math.pi / 4), (PaperTriangle(), 0.5), (Rect(2, 3), 6.0),
     # |v| <= (1-|u|)^alpha, so the area is 4 int_0^1 (1-u)^alpha du = 4/(alpha+1)
     (CuspDomain(1.5), 4 / 2.5)],
    ids=lambda v: v.spec() if hasattr(v, "spec") else "",
)
def test_areas(domain, area):
    np.testing.assert_allclose(integrate(lambda x, y: np.ones_like(x), domain).value, area, rtol=1e-9)


def test_cusp_field_alpha_15():
    alpha = 1.5
    exact = 1 / (alpha * (2 - alpha) * (3 - alpha)) + 1 / (alpha + 1)
    res = integrate(cusp_field(alpha), PaperTriangle(), rel_tol=1e-10)
    np.testing.assert_allclose(res.value, exact, rtol=1e-8)
    np.testing.assert_allclose(exact, 1.2888888888888888, rtol=1e-15)


@pytest.mark.parametrize("alpha", [2.0, 2.5, 4.0])
def test_cusp_field_diverges(alpha):
    res = integrate(cusp_field(alpha), PaperTriangle())
    assert res.divergent and not res.converged
    assert res.value == math.inf


@pytest.mark.parametrize("beta", [-0.9, -0.5, 0.0, 0.5, 2.0, 3.0])
def test_error_contract_power(beta):
    # int over [0,1]^2 of y^beta = 1/(beta+1)
    res = integrate(lambda x, y: y**beta, UnitSquare(), rel_tol=1e-8)
    exact = 1 / (beta + 1)
    assert abs(res.value - exact) <= 3 * res.error_estimate + 1e-15 * exact


def test_error_contract_polynomial():
    res = integrate(lambda x, y: x**3 * y + 2 * x * y**4, Rect(1, 2), rel_tol=1e-9)
    exact = (1 / 4) * 2 + 2 * (1 / 2) * (32 / 5)
    assert abs(res.value - exact) <= 3 * res.error_estimate + 1e-15 * exact


def test_bad_rel_tol():
    with pytest.raises(ParameterError):
        integrate(lambda x, y: x, UnitSquare(), rel_tol=0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(-1, 1))
def test_monotone_in_domain(w, h, c):
    def f(x, y):
        return (x - c) ** 2 + np.sin(y) ** 2

    small = integrate(f, Rect(w, h)).value
    big = integrate(f, Rect(w, 2 * h)).value
    assert big >= small * (1 - 1e-12)


def test_conjugate_kappa():
    assert conjugate_kappa(2, 2) == math.inf
    assert conjugate_kappa(2, 1) == 2
    np.testing.assert_allclose(conjugate_kappa(4, 2), 4)
    assert conjugate_kappa(math.inf, 1) == 1
    with pytest.raises(ParameterError):
        conjugate_kappa(1, 2)


def test_identity_norm_examples():
    assert composition_norm_bound(Identity(), UnitSquare(), 2, 2).norm_bound == 1.0
    np.testing.assert_allclose(h_norm_bound(Identity(), UnitSquare(), 2, 1).norm_bound, 1.0, rtol=1e-12)


@pytest.mark.parametrize("domain", [UnitSquare(), Diamond(), Disk(), PaperTriangle(), Rect(1, 2)],
                         ids=lambda d: d.spec())
@pytest.mark.parametrize("p, q", [(2, 1), (3, 2), (2, 2)])
def test_identity_norm_is_area_power(domain, p, q):
    rep = composition_norm_bound(Identity(), domain, p, q)
    area = integrate(lambda x, y: np.ones_like(x), domain).value
    expected = 1.0 if p == q else area ** (1 / rep.kappa)
    np.testing.assert_allclose(rep.norm_bound, expected, rtol=1e-8)


@pytest.mark.parametrize("s", [0.5, 2.0])
@pytest.mark.parametrize("p, q", [(2, 1), (4, 2), (3, 3)])
def test_scaling_of_k_norm(s, p, q):
    rep = composition_norm_bound(Affine(s, 0, 0, s), Diamond(), p, q)
    area = 2.0
    factor = 1.0 if p == q else area ** (1 / rep.kappa)
    np.testing.assert_allclose(rep.norm_bound, factor * s ** (1 - 2 / p), rtol=1e-8)


def test_q_above_p_rejected():
    with pytest.raises(ParameterError):
        composition_norm_bound(Identity(), UnitSquare(), 1, 2)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.9])
def test_cusp_k_integral_quadrature(alpha):
    rep = composition_norm_bound(HolderCusp(alpha), PaperTriangle(), 2, 1, "frobenius",
                                 rel_tol=1e-10, multiplicity=4)
    np.testing.assert_allclose(rep.norm_bound, math.sqrt(cusp_k_squared(alpha)), rtol=1e-6)


def test_cusp_k_integral_frozen_value():
    np.testing.assert_allclose(math.sqrt(cusp_k_squared(1.5)), 2.2705848487901865, rtol=1e-15)
    rep = composition_norm_bound(HolderCusp(4), PaperTriangle(), 2, 1, "frobenius",
                                 multiplicity=4, mode="antiderivative")
    np.testing.assert_allclose(rep.norm_bound, math.sqrt(1.3), rtol=1e-15)


def test_triangle_times_four_equals_diamond():
    # the integrand depends on |y| only, so both regions give the same value
    tri = composition_norm_bound(HolderCusp(1.5), PaperTriangle(), 2, 1, "frobenius", multiplicity=4)
    dia = composition_norm_bound(HolderCusp(1.5), Diamond(), 2, 1, "frobenius")
    np.testing.assert_allclose(tri.norm_bound, dia.norm_bound, rtol=1e-7)


@pytest.mark.parametrize("alpha", [2.5, 4.0])
def test_cusp_k_integral_divergent(alpha):
    rep = composition_norm_bound(HolderCusp(alpha), PaperTriangle(), 2, 1, "frobenius", multiplicity=4)
    assert rep.quadrature.divergent
    assert rep.norm_bound == math.inf


@pytest.mark.parametrize("alpha", [2.0, 3.0])
def test_cusp_k_squared_poles(alpha):
    with pytest.raises(PoleError):
        cusp_k_squared(alpha)


def test_antiderivative_mode_restricted():
    with pytest.raises(ParameterError):
        composition_norm_bound(Identity(), PaperTriangle(), 2, 1, "frobenius", mode="antiderivative")


def test_h_norm_affine():
    rep = h_norm_bound(Affine(2, 0, 0, 1), Rect(2, 1), 2, 2)
    np.testing.assert_allclose(rep.norm_bound, math.sqrt(2), rtol=1e-9)


def test_h_norm_cusp_matches_change_of_variables():
    # int_target H_1^2 dy = int_source |D|^2 / J dx, i.e. the K_2 integral over the source
    alpha = 1.5
    hrep = h_norm_bound(HolderCusp(alpha), CuspDomain(alpha), 2, 1, "frobenius", rel_tol=1e-9)
    krep = composition_norm_bound(HolderCusp(alpha), Diamond(), 2, 1, "frobenius", rel_tol=1e-9)
    assert math.isfinite(hrep.norm_bound)
    np.testing.assert_allclose(hrep.norm_bound, krep.norm_bound, rtol=1e-6)


def test_h_norm_needs_inverse():
    class NoInverse(Mapping):
        def forward(self, x, y):
            return x, y

        def derivative(self, x, y):
            return np.ones_like(x), np.zeros_like(x), np.zeros_like(x), np.ones_like(x)

        def spec(self):
            return "no-inverse"

    with pytest.raises(UnsupportedMapError):
        h_norm_bound(NoInverse(), UnitSquare(), 2, 1)


def test_radial_sup_functionals():
    disk = Disk()
    m = RadialSquareDisk()
    assert sup_functional(m, disk, "jac-sqrt-sup", "frobenius", method="exact") == 1.0
    assert sup_functional(m, disk, "norm-over-jac-sup", "frobenius", method="exact") == 2.0
    np.testing.assert_allclose(sup_functional(m, disk, "jac-sqrt-sup", "frobenius", method="grid"),
                               1.0, rtol=1e-3)
    np.testing.assert_allclose(sup_functional(m, disk, "norm-over-jac-sup", "frobenius", method="grid"),
                               2.0, rtol=1e-3)


def test_cusp_jac_sqrt_sup():
    assert sup_functional(HolderCusp(4), Diamond(), "jac-sqrt-sup") == 2.0
    np.testing.assert_allclose(sup_functional(HolderCusp(4), Diamond(), "jac-sqrt-sup", method="grid"),
                               2.0, rtol=1e-6)


def test_cell_averages():
    centers = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75]])
    got = cell_averages(lambda x, y: x * y, centers, 0.5)
    np.testing.assert_allclose(got, centers[:, 0] * centers[:, 1], rtol=1e-12)
    # integrable singularity on a cell edge: average of y^-0.5 over [0, h] is 2/sqrt(h)
    got = cell_averages(lambda x, y: np.abs(y) ** -0.5, np.array([[0.5, 0.125]]), 0.25)
    np.testing.assert_allclose(got, [2 / math.sqrt(0.25)], rtol=1e-6)
    got = cell_averages(lambda x, y: np.abs(y) ** -1.5, np.array([[0.5, 0.125]]), 0.25)
    assert got[0] == math.inf
