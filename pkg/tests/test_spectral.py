import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qconf.domains import CuspDomain, Rect, UnitSquare
from qconf.errors import NonConvergenceError, ParameterError, PoleError
from qconf.spectral import (
    SQRT_PI3,
    assemble_neumann_laplacian,
    cusp_closed_form_bound,
    cusp_spectral_bound,
    discretize,
    first_nontrivial_eigenvalue,
    neumann_mu1,
    poincare_bound,
    write_convergence_csv,
)


def test_laplacian_unit_square_small():
    a = assemble_neumann_laplacian(UnitSquare(), 1 / 4)
    assert a.shape == (16, 16)
    np.testing.assert_allclose(np.asarray(a.sum(axis=1)).ravel(), 0.0, atol=1e-12)


@pytest.mark.parametrize("domain, h", [(Rect(1, 2), 1 / 8), (CuspDomain(1.5), 1 / 64)])
def test_laplacian_symmetric_with_constant_kernel(domain, h):
    a = assemble_neumann_laplacian(domain, h)
    assert abs(a - a.T).max() == 0.0
    np.testing.assert_allclose(a @ np.ones(a.shape[0]), 0.0, atol=1e-9)


def test_discretize_requires_cells():
    assert discretize(UnitSquare(), 1 / 16, min_cells=256).cells == 256
    from qconf.errors import ResolutionError

    with pytest.raises(ResolutionError):
        discretize(UnitSquare(), 1 / 8, min_cells=256)


def test_cell_centred_neumann_square_exact():
    # the five-point Neumann operator on the square has mu1 = (4/h^2) sin^2(pi h / 2)
    h = 1 / 32
    rep = first_nontrivial_eigenvalue(assemble_neumann_laplacian(UnitSquare(), h), tol=1e-12)
    np.testing.assert_allclose(rep.mu1, 4 / h**2 * math.sin(math.pi * h / 2) ** 2, rtol=1e-10)


@pytest.mark.parametrize("domain, exact", [(UnitSquare(), math.pi**2), (Rect(1, 2), math.pi**2 / 4)],
                         ids=["square", "rect1x2"])
def test_mu1_rectangles(domain, exact):
    rep = neumann_mu1(domain, 1 / 128)
    np.testing.assert_allclose(rep.mu1, exact, rtol=1e-2)
    assert rep.residual <= 1e-8 * rep.operator_norm
    # Richardson removes the O(h^2) term
    assert abs(rep.richardson_estimate - exact) < abs(rep.mu1 - exact) / 100
    assert abs(rep.eigenvector.sum()) < 1e-10


def test_second_order_convergence():
    mus = [neumann_mu1(Rect(1, 2), h, richardson=False).mu1 for h in (1 / 16, 1 / 32, 1 / 64)]
    assert abs(mus[0] - mus[1]) < 4 * abs(mus[1] - mus[2])
    assert abs(mus[0] - mus[1]) > 3.5 * abs(mus[1] - mus[2])


def test_monotone_domain_sanity():
    assert neumann_mu1(Rect(1, 2), 1 / 32).mu1 < neumann_mu1(UnitSquare(), 1 / 32).mu1


def test_eigensolver_cap():
    with pytest.raises(NonConvergenceError):
        first_nontrivial_eigenvalue(assemble_neumann_laplacian(UnitSquare(), 1 / 32), tol=1e-14, max_iters=2)


def test_eigensolver_rejects_asymmetric():
    a = assemble_neumann_laplacian(UnitSquare(), 1 / 8).tolil()
    a[0, 1] += 1.0
    with pytest.raises(ParameterError):
        first_nontrivial_eigenvalue(a.tocsr())


def test_convergence_csv(tmp_path):
    reps = [neumann_mu1(UnitSquare(), h, richardson=False) for h in (1 / 16, 1 / 32)]
    out = tmp_path / "conv.csv"
    write_convergence_csv(out, reps)
    rows = out.read_text().splitlines()
    assert rows[0] == "h,mu1,residual"
    assert len(rows) == 3


def test_poincare_constants():
    assert poincare_bound("disk") == 3 * math.sqrt(math.pi**3) / 4
    assert poincare_bound("diamond-square") == 3 * math.sqrt(math.pi**3) / 2
    assert poincare_bound("bilipschitz", 2) == 3 * math.sqrt(2**5 * math.pi**3) / 4
    np.testing.assert_allclose(poincare_bound("bilipschitz", 1), poincare_bound("disk"), rtol=1e-15)
    np.testing.assert_allclose(poincare_bound("disk"), 4.176245997623781, rtol=1e-15)
    with pytest.raises(ParameterError):
        poincare_bound("bilipschitz", 0.5)
    with pytest.raises(ParameterError):
        poincare_bound("triangle")


def test_headline_bound():
    rep = cusp_spectral_bound(4.0)
    np.testing.assert_allclose(rep.closed_form_bound, 1 / (11.7 * math.pi**3), rtol=1e-12)
    np.testing.assert_allclose(rep.pipeline_bound, rep.closed_form_bound, rtol=1e-10)
    assert rep.antiderivative_mode
    np.testing.assert_allclose(rep.components["K_norm"], math.sqrt(1.3), rtol=1e-15)
    assert rep.components["M2"] == 2.0


def test_closed_form_alpha_15():
    np.testing.assert_allclose(cusp_closed_form_bound(1.5), 2.8125 / (48.9375 * math.pi**3), rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0001, 20.0).filter(lambda a: min(abs(a - 2), abs(a - 3)) > 1e-3))
def test_pipeline_identity(alpha):
    k2 = 4 / (alpha * (2 - alpha) * (3 - alpha)) + 4 / (alpha + 1)
    closed = cusp_closed_form_bound(alpha)
    np.testing.assert_allclose(closed, 1 / (k2 * (9 * math.pi**3 / 4) * alpha), rtol=1e-12)
    rep = cusp_spectral_bound(alpha)
    np.testing.assert_allclose(rep.pipeline_bound, closed, rtol=1e-10)
    np.testing.assert_allclose(rep.components["B_source"], 1.5 * SQRT_PI3, rtol=1e-15)


@pytest.mark.parametrize("alpha", [2.0, 3.0])
def test_poles(alpha):
    with pytest.raises(PoleError):
        cusp_spectral_bound(alpha)


def test_alpha_must_exceed_one():
    with pytest.raises(ParameterError):
        cusp_closed_form_bound(1.0)


def test_quadrature_component_matches_closed_form():
    rep = cusp_spectral_bound(1.5)
    np.testing.assert_allclose(rep.components["K_norm_quadrature"], rep.components["K_norm"], rtol=1e-8)


def test_formal_bound_negative_between_poles():
    rep = cusp_spectral_bound(2.5)
    assert rep.antiderivative_mode
    assert rep.closed_form_bound < 0
    np.testing.assert_allclose(rep.pipeline_bound, rep.closed_form_bound, rtol=1e-10)


def test_fd_check_small():
    rep = cusp_spectral_bound(1.5, with_fd_check=True, h=1 / 64)
    assert rep.satisfied
    assert rep.numerical_mu1 > 100 * rep.closed_form_bound
