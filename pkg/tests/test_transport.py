import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pnpfv.grid import MINUS, PLUS, build_grid
from pnpfv.sparse import SolverConfig, solve
from pnpfv.transport import MEANS, DirichletFace, assemble_density_step, interior_fluxes, slotboom_weight

TIGHT = SolverConfig("cg", "ilu0", 1e-13)


def step(grid, rho, psi, tau, mean="harmonic", dirichlet=(), d=None, source=None):
    dfaces = [np.ones(grid.interior_faces(a)[0].size) if d is None else d[a] for a in range(grid.dim)]
    system = assemble_density_step(grid, rho, psi, dfaces, list(dirichlet), tau, mean, source)
    return system.density(solve(system.matrix, system.rhs, TIGHT).x), system


@pytest.mark.parametrize("kind", MEANS)
def test_means_at_zero(kind):
    assert slotboom_weight(0.0, 0.0, kind) == 1.0


@pytest.mark.parametrize("kind, expected", [
    ("harmonic", 0.5), ("geometric", 3 ** -0.5), ("algebraic", 2 / 3),
])
def test_means_hand_values(kind, expected):
    assert slotboom_weight(0.0, math.log(3.0), kind) == pytest.approx(expected, rel=1e-14)
    assert slotboom_weight(math.log(3.0), 0.0, kind) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("kind", MEANS)
@given(c=st.floats(-700, 700))
def test_means_equal_arguments(kind, c):
    assert slotboom_weight(c, c, kind) == pytest.approx(math.exp(-c), rel=1e-13)


@pytest.mark.parametrize("kind", MEANS)
def test_means_log_stable(kind):
    # e^{700.5} overflows on its own; the mean of e^{700} and e^{700.5} does not
    w = slotboom_weight(-700.0, -700.5, kind)
    assert np.isfinite(w)
    assert math.log(w) == pytest.approx(700.25, abs=0.3)
    w = slotboom_weight(745.0, 760.0, kind)
    assert 0.0 <= w < math.exp(-745.0 + 1)


def test_harmonic_ordering():
    a, b = 0.3, 2.1
    h, g, m = (slotboom_weight(a, b, k) for k in MEANS)
    assert h <= g <= m


def test_two_cell_first_order_step():
    g = build_grid(1, [2.0], [2])
    rho, system = step(g, [2.0, 0.0], np.zeros(2), 1.0)
    assert np.allclose(system.matrix.to_dense(), [[2, -1], [-1, 2]])
    assert rho == pytest.approx([4 / 3, 2 / 3], abs=1e-13)


def test_zero_step_limit_and_constant_state():
    g = build_grid(1, [2.0], [2])
    rho, _ = step(g, [2.0, 0.0], np.zeros(2), 1e-14)
    assert rho == pytest.approx([2.0, 0.0], abs=1e-12)
    rho, _ = step(g, [1.0, 1.0], np.zeros(2), 1.0)
    assert rho == pytest.approx([1.0, 1.0], abs=1e-14)
    with pytest.raises(ValueError):
        step(g, [1.0, 1.0], np.zeros(2), 0.0)


def test_input_validation():
    g = build_grid(1, [1.0], [2])
    with pytest.raises(ValueError, match="negative density"):
        step(g, [-1.0, 1.0], np.zeros(2), 1.0)
    with pytest.raises(ValueError, match="diffusion"):
        step(g, [1.0, 1.0], np.zeros(2), 1.0, d=[np.array([0.0])])
    bad = DirichletFace(0, MINUS, np.zeros(1), -np.ones(1), np.ones(1))
    with pytest.raises(ValueError, match="trace"):
        step(g, [1.0, 1.0], np.zeros(2), 1.0, dirichlet=[bad])
    with pytest.raises(ValueError, match="non-finite"):
        step(g, [1.0, 1.0], np.array([0.0, np.nan]), 1.0)


def test_boltzmann_state_is_stationary():
    g = build_grid(2, [1, 1], [6, 5])
    x, y, _ = g.cell_centers()
    psi = np.sin(3 * x) + y ** 2
    rho = 0.7 * np.exp(-psi)
    for kind in MEANS:
        new, _ = step(g, rho, psi, 10.0, kind)
        assert np.allclose(new, rho, rtol=1e-11)


def test_dirichlet_equilibrium():
    # rho^b e^{psi^b} = const matches the interior Boltzmann state
    g = build_grid(1, [1.0], [8])
    x = g.cell_centers()[0]
    psi = 2 * x
    rho = 3 * np.exp(-psi)
    faces = [DirichletFace(0, MINUS, np.array([0.0]), np.array([3.0]), np.ones(1)),
             DirichletFace(0, PLUS, np.array([2.0]), np.array([3 * math.exp(-2)]), np.ones(1))]
    new, _ = step(g, rho, psi, 5.0, dirichlet=faces)
    assert np.allclose(new, rho, rtol=1e-11)


def test_source_term():
    g = build_grid(1, [1.0], [3])
    new, _ = step(g, np.ones(3), np.zeros(3), 0.5, source=np.full(3, 2.0))
    assert np.allclose(new, 2.0)


def test_interior_fluxes_two_cell():
    g = build_grid(1, [2.0], [2])
    (c,) = interior_fluxes(g, np.array([4 / 3, 2 / 3]), np.zeros(2), [np.ones(1)])
    assert c == pytest.approx([-2 / 3])


@st.composite
def density_problems(draw):
    dim = draw(st.integers(1, 3))
    counts = draw(st.lists(st.integers(1, 5), min_size=dim, max_size=dim))
    seed = draw(st.integers(0, 2 ** 31))
    g = build_grid(dim, [1.0] * dim, counts)
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0, 2, g.size) * (rng.uniform(size=g.size) < 0.7)
    psi = rng.uniform(-5, 5, g.size)
    d = [rng.uniform(0.5, 2.0, g.interior_faces(a)[0].size) for a in range(dim)]
    tau = draw(st.sampled_from([1e-3, 1.0, 1e3]))
    mean = draw(st.sampled_from(MEANS))
    return g, rho, psi, d, tau, mean


@given(density_problems())
def test_no_flux_step_conserves_mass_and_positivity(problem):
    g, rho, psi, d, tau, mean = problem
    new, system = step(g, rho, psi, tau, mean, d=d)
    assert new.min() >= -1e-12 * max(new.max(), 1e-300)
    assert new.sum() == pytest.approx(rho.sum(), rel=1e-10, abs=1e-13)
    assert system.matrix.symmetry_error() == 0.0


@given(density_problems(), st.floats(-50, 50))
def test_potential_shift_invariance(problem, c):
    g, rho, psi, d, tau, mean = problem
    a, _ = step(g, rho, psi, tau, mean, d=d)
    b, _ = step(g, rho, psi + c, tau, mean, d=d)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12 * max(1.0, rho.max()))


@pytest.mark.parametrize("kind", MEANS)
def test_means_agree_for_constant_potential(kind):
    g = build_grid(2, [1, 1], [4, 4])
    rho = np.random.default_rng(1).uniform(0, 1, g.size)
    ref, _ = step(g, rho, np.full(g.size, 0.4), 0.1, "harmonic")
    new, _ = step(g, rho, np.full(g.size, 0.4), 0.1, kind)
    assert np.allclose(new, ref, rtol=1e-13)
