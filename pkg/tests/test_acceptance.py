"""End-to-end acceptance criteria, each at its stated tolerance and time budget."""

import io
import json
import math
import time

import numpy as np

from qconf.cli import run
from qconf.domains import CuspDomain, Diamond, Disk, PaperTriangle, Rect, UnitSquare
from qconf.mappings import Affine, HolderCusp, Identity, RadialSquareDisk
from qconf.modulus import CurveFamily, build_grid, discrete_capacity, discrete_modulus
from qconf.quadrature import composition_norm_bound, sup_functional
from qconf.spectral import cusp_closed_form_bound, neumann_mu1, poincare_bound
from qconf.verify import dual_exponents, holder_conjugate, measure_distortion_check, q_inequality_check


def rel(a, b):
    return abs(a - b) / abs(b)


def test_criterion_01_headline_bound(criterion):
    t0 = time.perf_counter()
    out = io.StringIO()
    code = run(["spectral", "--alpha", "4"], stdout=out)
    elapsed = time.perf_counter() - t0
    res = json.loads(out.getvalue())["result"]
    target = 1 / (11.7 * math.pi**3)
    e_closed = rel(res["closed_form_bound"], target)
    e_pipe = rel(res["pipeline_bound"], res["closed_form_bound"])
    ok = code == 0 and e_closed <= 1e-9 and e_pipe <= 1e-10 and elapsed < 1.0
    criterion(1, ok, f"closed form rel err {e_closed:.1e}, pipeline rel diff {e_pipe:.1e}, {elapsed:.2f} s")


def test_criterion_02_k_integral(criterion):
    notes, ok = [], True
    for alpha in (1.2, 1.5, 1.9):
        t0 = time.perf_counter()
        rep = composition_norm_bound(HolderCusp(alpha), PaperTriangle(), 2, 1, "frobenius",
                                     rel_tol=1e-10, multiplicity=4)
        elapsed = time.perf_counter() - t0
        exact = math.sqrt(4 / (alpha * (2 - alpha) * (3 - alpha)) + 4 / (alpha + 1))
        err = rel(rep.norm_bound, exact)
        ok &= err <= 1e-6 and elapsed < 10
        notes.append(f"a={alpha}: {err:.1e}")
    for alpha in (2.5, 4.0):
        t0 = time.perf_counter()
        rep = composition_norm_bound(HolderCusp(alpha), PaperTriangle(), 2, 1, "frobenius", multiplicity=4)
        elapsed = time.perf_counter() - t0
        ok &= rep.quadrature.divergent and elapsed < 10
        notes.append(f"a={alpha}: {'divergent' if rep.quadrature.divergent else 'NOT divergent'}")
    criterion(2, ok, ", ".join(notes))


def test_criterion_03_radial_suprema(criterion):
    t0 = time.perf_counter()
    m, disk = RadialSquareDisk(), Disk()
    grid_j = sup_functional(m, disk, "jac-sqrt-sup", "frobenius", method="grid")
    grid_n = sup_functional(m, disk, "norm-over-jac-sup", "frobenius", method="grid")
    exact_j = sup_functional(m, disk, "jac-sqrt-sup", "frobenius", method="exact")
    exact_n = sup_functional(m, disk, "norm-over-jac-sup", "frobenius", method="exact")
    elapsed = time.perf_counter() - t0
    ok = (abs(grid_j - 1) <= 1e-3 and abs(grid_n - 2) <= 1e-3 and abs(exact_j - 1) <= 1e-12
          and abs(exact_n - 2) <= 1e-12 and elapsed < 5)
    criterion(3, ok, f"grid sup|J|^1/2={grid_j:.6f}, sup|D|/J={grid_n:.6f}, {elapsed:.2f} s")


def test_criterion_04_poincare_constants(criterion):
    vals = (poincare_bound("disk"), poincare_bound("diamond-square"), poincare_bound("bilipschitz", 2.0))
    exact = (3 * math.sqrt(math.pi**3) / 4, 3 * math.sqrt(math.pi**3) / 2, 3 * math.sqrt(2.0**5 * math.pi**3) / 4)
    errs = [rel(v, e) for v, e in zip(vals, exact)]
    criterion(4, max(errs) <= 2.3e-16, "values " + ", ".join(f"{v:.15g}" for v in vals))


def test_criterion_05_eigensolver(criterion):
    notes, ok = [], True
    for name, dom, exact in (("square", UnitSquare(), math.pi**2), ("rect1x2", Rect(1, 2), math.pi**2 / 4)):
        t0 = time.perf_counter()
        rep = neumann_mu1(dom, 1 / 128, tol=5e-14, richardson=False)
        elapsed = time.perf_counter() - t0
        err = rel(rep.mu1, exact)
        ok &= err <= 0.01 and rep.residual <= 1e-8 and elapsed < 60
        notes.append(f"{name}: mu1={rep.mu1:.6f} err {err:.1e} residual {rep.residual:.1e}")
    criterion(5, ok, "; ".join(notes))


def test_criterion_06_bound_validity(criterion):
    notes, ok = [], True
    for alpha in (1.2, 1.5, 1.9):
        t0 = time.perf_counter()
        mu1 = neumann_mu1(CuspDomain(alpha), 1 / 128, richardson=False).mu1
        elapsed = time.perf_counter() - t0
        bound = cusp_closed_form_bound(alpha)
        ok &= mu1 >= bound and elapsed < 120
        notes.append(f"a={alpha}: mu1={mu1:.4f} >= {bound:.3e}")
    criterion(6, ok, "; ".join(notes))


def test_criterion_07_discrete_modulus(criterion):
    notes, ok = [], True
    for dom, fam, exact in ((UnitSquare(), "opposite-sides:x", 1.0), (Rect(1, 2), "opposite-sides:y", 0.5),
                            (Rect(1, 2), "opposite-sides:x", 2.0)):
        t0 = time.perf_counter()
        val = discrete_modulus(build_grid(dom, 1 / 64), CurveFamily.parse(fam)).value
        elapsed = time.perf_counter() - t0
        ok &= rel(val, exact) <= 0.02 and elapsed < 60
        notes.append(f"{dom.spec()} {fam}: {val:.4f}")
    t0 = time.perf_counter()
    fam = CurveFamily.parse("annulus:rin=0.25,rout=1")
    sol = discrete_modulus(build_grid(Disk(), 1 / 64), fam)
    elapsed = time.perf_counter() - t0
    ring = 2 * math.pi / math.log(4)
    cap = discrete_capacity(sol.marked)
    ok &= rel(sol.value, ring) <= 0.03 and rel(sol.value, cap) <= 0.05 and elapsed < 60
    notes.append(f"annulus: {sol.value:.4f} vs {ring:.4f} ({rel(sol.value, ring):.1%}), "
                 f"capacity {cap:.4f}, {elapsed:.1f} s")
    criterion(7, ok, "; ".join(notes))


def test_criterion_08_q_inequality(criterion):
    cases = (
        ("identity", Identity(), UnitSquare(), "opposite-sides:x", (1 / 32, 1 / 64)),
        ("affine", Affine(2, 0, 0, 1), UnitSquare(), "opposite-sides:x", (1 / 32, 1 / 64)),
        ("cusp1.5", HolderCusp(1.5), Diamond(), "arcs:45..135,225..315", (1 / 64, 1 / 128)),
    )
    notes, ok = [], True
    for name, m, dom, fam, spacings in cases:
        reps = [q_inequality_check(m, dom, CurveFamily.parse(fam), h, slack=0.1) for h in spacings]
        ratios = [r.lhs / r.rhs for r in reps]
        ok &= all(r.satisfied for r in reps) and rel(ratios[1], ratios[0]) <= 0.05
        if name == "identity":
            ok &= all(r.lhs == r.rhs for r in reps)
        notes.append(f"{name}: ratio {ratios[0]:.4f} / {ratios[1]:.4f}")
    criterion(8, ok, "; ".join(notes))


def test_criterion_09_measure_distortion(criterion):
    ident = measure_distortion_check(Identity(), [Rect(0.5, 0.5, 0.25, 0.25), Rect(1, 1)], 1, 1 / 64)
    ok = ident.details["C_empirical"] == 1.0
    notes = [f"identity C={ident.details['C_empirical']}"]
    cases = (
        ("affine", Affine(2, 0, 0, 1), [Rect(1, 0.5), Rect(0.3, 0.3, 1.1, 0.2)], (1 / 64, 1 / 128)),
        ("cusp1.5", HolderCusp(1.5), [Rect(0.15, 0.04, 0.7, 0.005)], (1 / 128, 1 / 256)),
    )
    for name, m, boxes, spacings in cases:
        cs = [measure_distortion_check(m, boxes, 1, h).details["C_empirical"] for h in spacings]
        ok &= all(math.isfinite(c) and c > 0 for c in cs) and rel(cs[1], cs[0]) <= 0.05
        notes.append(f"{name} C={cs[0]:.4f} / {cs[1]:.4f}")
    criterion(9, ok, "; ".join(notes))


def test_criterion_10_duality(criterion):
    rng = np.random.default_rng(2024)
    ps = rng.uniform(1, 100, 20)
    ps = ps[ps > 1]
    err = max(rel(holder_conjugate(holder_conjugate(p)), p) for p in ps)
    d = dual_exponents(3, 2.5, n=3, mode="sobolev")
    ok = err <= 1e-12 and len(ps) == 20 and d.p_dual == 3 and d.q_dual == 5
    criterion(10, ok, f"involution max rel err {err:.1e}; n=3 duals {d.p_dual:g}, {d.q_dual:g}")
