import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from perfhom import kernels
from perfhom.errors import ConvergenceError, DomainError, ShapeError
from perfhom.numerics import (BOUNDARY, FREE, HOLE, Grid, NodeMask, ScalarField, StencilOperator, apply_laplacian,
                              cg_solve, edge_energy, extend_restrict, norms, read_field, solve_dirichlet, write_field)


def _sparse_laplacian(n, h):
    """Dirichlet -Delta_h on the (n-2)^3 interior nodes, assembled by Kronecker products."""
    m = n - 2
    t = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h**2
    eye = sp.identity(m)
    return (sp.kron(sp.kron(t, eye), eye) + sp.kron(sp.kron(eye, t), eye) + sp.kron(sp.kron(eye, eye), t)).tocsr()


def test_grid_basics():
    g = Grid.cube(0, 1, 5)
    assert np.allclose(g.h, 0.25)
    assert g.cell_volume == pytest.approx(0.25**3)
    assert g.points().shape == (5, 5, 5, 3)
    with pytest.raises(DomainError):
        Grid.cube(1, 0, 5)
    with pytest.raises(DomainError):
        Grid.cube(0, 1, 2)


def test_operator_matches_sparse_assembly(rng):
    n = 9
    g = Grid.cube(0, 1, n)
    mask = NodeMask.box(g)
    x = rng.normal(size=g.shape)
    got = StencilOperator(mask)(x)
    ref = _sparse_laplacian(n, 1 / (n - 1)) @ x[1:-1, 1:-1, 1:-1].ravel()
    assert np.allclose(got[1:-1, 1:-1, 1:-1].ravel(), ref, rtol=1e-12, atol=1e-9)
    assert np.all(got[0] == 0)


def test_solve_matches_sparse_direct(rng):
    n = 11
    g = Grid.cube(0, 1, n)
    f = rng.uniform(size=g.shape)
    u = solve_dirichlet(NodeMask.box(g), f, tol=1e-12)
    ref = spla.spsolve(_sparse_laplacian(n, 1 / (n - 1)).tocsc(), f[1:-1, 1:-1, 1:-1].ravel())
    assert np.allclose(u[1:-1, 1:-1, 1:-1].ravel(), ref, rtol=1e-9)


def test_discrete_eigenfunction_exact():
    # sin(pi x) sin(pi y) sin(pi z) is an exact discrete eigenvector with eigenvalue 3 (4/h^2) sin^2(pi h / 2)
    n = 17
    g = Grid.cube(0, 1, n)
    x, y, z = g.coords()
    phi = np.sin(math.pi * x) * np.sin(math.pi * y) * np.sin(math.pi * z)
    h = 1 / (n - 1)
    lam = 3 * 4 / h**2 * math.sin(math.pi * h / 2) ** 2
    u = solve_dirichlet(NodeMask.box(g), lam * phi, tol=1e-12)
    assert np.max(np.abs(u - phi)) < 1e-9


def test_manufactured_quadratic_convergence():
    errs = []
    for n in (9, 17, 33):
        g = Grid.cube(0, 1, n)
        x, y, z = g.coords()
        phi = np.sin(math.pi * x) * np.sin(math.pi * y) * np.sin(math.pi * z)
        u = solve_dirichlet(NodeMask.box(g), 3 * math.pi**2 * phi, tol=1e-12)
        errs.append(np.max(np.abs(u - phi)))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_energy_identity(rng):
    g = Grid.cube(0, 1, 17)
    f = rng.normal(size=g.shape)
    tol = 1e-10
    u = solve_dirichlet(NodeMask.box(g), f, tol=tol)
    lhs = edge_energy(u, g)
    rhs = g.cell_volume * float(np.sum(np.where(NodeMask.box(g).free != 0, f, 0) * u))
    assert abs(lhs - rhs) <= 10 * tol * abs(lhs)


def test_maximum_principle(rng):
    g = Grid.cube(0, 1, 13)
    mask = NodeMask.box(g)
    for _ in range(5):
        f = rng.uniform(size=g.shape)
        assert solve_dirichlet(mask, f, tol=1e-12).min() >= -1e-14


def test_dirichlet_lifting_harmonic():
    # linear functions are discrete harmonic, so boundary data x reproduces x
    g = Grid.cube(0, 1, 9)
    x, _, _ = g.coords()
    u = solve_dirichlet(NodeMask.box(g), dirichlet=x, tol=1e-13)
    assert np.max(np.abs(u - x)) < 1e-11


def test_hole_nodes_hold_dirichlet_value():
    g = Grid.cube(0, 1, 9)
    labels = NodeMask.box(g).labels.copy()
    labels[4, 4, 4] = HOLE
    mask = NodeMask(g, labels)
    u = solve_dirichlet(mask, dirichlet=(labels == HOLE).astype(float), tol=1e-12)
    assert u[4, 4, 4] == 1
    assert 0 < u[3, 4, 4] < 1
    assert u[0, 4, 4] == 0
    assert mask.count(HOLE) == 1 and mask.count(FREE) == 7**3 - 1


def test_free_face_rejected():
    g = Grid.cube(0, 1, 5)
    labels = np.zeros(g.shape, dtype=np.int8)
    with pytest.raises(ShapeError):
        StencilOperator(NodeMask(g, labels))


def test_negative_shift_rejected():
    g = Grid.cube(0, 1, 5)
    with pytest.raises(DomainError):
        StencilOperator(NodeMask.box(g), -1.0)


def test_convergence_error():
    g = Grid.cube(0, 1, 17)
    f = np.ones(g.shape)
    with pytest.raises(ConvergenceError) as info:
        solve_dirichlet(NodeMask.box(g), f, tol=1e-14, max_iter=2)
    assert info.value.iterations == 2


def test_generic_operator_path(rng):
    a = rng.normal(size=(6, 6))
    a = a @ a.T + 6 * np.eye(6)
    b = rng.normal(size=6)
    x = cg_solve(lambda v: a @ v, b, tol=1e-12)
    assert np.allclose(a @ x, b)


def test_backends_agree(rng):
    g = Grid.cube(0, 1, 15)
    mask = NodeMask.box(g)
    op = StencilOperator(mask, shift=2.0)
    b = np.where(op.free != 0, rng.normal(size=g.shape), 0.0)
    x_nb, x_np = np.zeros(g.shape), np.zeros(g.shape)
    kernels.cg_nb(b, x_nb, op.free, op.shift, *op.coef, 1e-12, 5000, False)
    kernels.cg_np(b, x_np, op.free, op.shift, *op.coef, 1e-12, 5000, False)
    assert np.allclose(x_nb, x_np, rtol=1e-9, atol=1e-12)
    out_nb, out_np = np.empty(g.shape), np.empty(g.shape)
    kernels.apply_operator_nb(b, op.free, op.shift, *op.coef, out_nb)
    kernels.apply_operator_np(b, op.free, op.shift, *op.coef, out_np)
    assert np.allclose(out_nb, out_np)


def test_small_solve_after_large_solve():
    # regression: the work array of the fused kernel must not carry stale face values
    big = Grid.cube(0, 1, 41)
    solve_dirichlet(NodeMask.box(big), np.ones(big.shape), tol=1e-10)
    small = Grid.cube(0, 1, 9)
    for jacobi in (False, True):
        u = solve_dirichlet(NodeMask.box(small), np.ones(small.shape), tol=1e-12, jacobi=jacobi)
        op = StencilOperator(NodeMask.box(small))
        ref = np.zeros(small.shape)
        kernels.cg_np(np.where(op.free != 0, 1.0, 0.0), ref, op.free, op.shift, *op.coef, 1e-12, 5000, False)
        assert np.allclose(u, ref, rtol=1e-9, atol=1e-13)


def test_norms_and_extension(rng):
    g = Grid.cube(0, 1, 9)
    ones = ScalarField(g, np.ones(g.shape))
    l2, h1 = norms(ones)
    assert l2 == pytest.approx(math.sqrt(g.cell_volume * 9**3))
    assert h1 == 0
    labels = NodeMask.box(g).labels.copy()
    labels[4, 4, 4] = HOLE
    ext = extend_restrict(ones, NodeMask(g, labels), "extend")
    assert ext.values[4, 4, 4] == 0 and ext.values[0, 0, 0] == 0 and ext.values[1, 1, 1] == 1
    with pytest.raises(DomainError):
        extend_restrict(ones, NodeMask(g, labels), "sideways")
    lap = apply_laplacian(ScalarField(g, rng.normal(size=g.shape)), NodeMask.box(g))
    assert lap.values.shape == g.shape


def test_field_roundtrip(tmp_path, rng):
    g = Grid((0, 0, 0), (1, 2, 3), 5)
    fld = ScalarField(g, rng.normal(size=g.shape))
    jpath, bpath = write_field(fld, tmp_path / "u")
    assert bpath.stat().st_size == 8 * 125
    back = read_field(tmp_path / "u")
    assert back.grid == g
    assert np.array_equal(back.values, fld.values)
    # x varies fastest in the binary dump
    raw = np.fromfile(bpath, dtype="<f8")
    assert raw[1] == fld.values[1, 0, 0]


def test_boundary_label_constant():
    assert (FREE, BOUNDARY, HOLE) == (0, 1, 2)


def test_numpy_fallback_selected_by_env(tmp_path):
    import os
    import subprocess
    import sys

    code = ("from perfhom._accel import backend_name\n"
            "from perfhom import kernels\n"
            "import numpy as np\n"
            "from perfhom.numerics import Grid, NodeMask, solve_dirichlet\n"
            "g = Grid.cube(0, 1, 9)\n"
            "u = solve_dirichlet(NodeMask.box(g), np.ones(g.shape), tol=1e-12)\n"
            "print(backend_name(), kernels.cg is kernels.cg_np, repr(float(u[4, 4, 4])))\n")
    env = dict(os.environ, PERFHOM_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    name, is_np, centre = out.split()
    assert name == "numpy" and is_np == "True"
    g = Grid.cube(0, 1, 9)
    ref = solve_dirichlet(NodeMask.box(g), np.ones(g.shape), tol=1e-12)[4, 4, 4]
    assert float(centre) == pytest.approx(ref, rel=1e-10)
