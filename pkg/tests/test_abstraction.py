import numpy as np
import pytest

from switchsynth.abstraction import (
    HybridSystem,
    SparseRow,
    build_imdp,
    discretize,
    label_states,
    validate,
)
from switchsynth.geometry import HyperRectangle
from switchsynth.kernel import ModeDynamics
from switchsynth.pipeline import dfa_for_formula, synthesize


def cs1_system(regions=None):
    F = np.diag([0.85, 0.90])
    G = np.diag([0.15, 0.05])
    dyn = ModeDynamics(F, G, np.eye(2))
    X = HyperRectangle([-1, -1], [1, 1])
    if regions is None:
        regions = [("X", HyperRectangle([-1, -1], [1, 1]))]
    return HybridSystem(modes=[("a1", dyn)], X=X, regions=regions)


def rotated_system():
    G = np.array([[0.3, 0.1], [0.1, 0.2]])
    dyn = ModeDynamics(np.array([[0.1, 0.9], [0.8, 0.2]]), G, np.eye(2))
    X = HyperRectangle([-2, -2], [2, 2])
    return HybridSystem(modes=[("a1", dyn)], X=X, regions=[])


class TestDiscretize:
    def test_isotropic_grid_count(self):
        # per-axis whitened steps reproduce a 19-per-side grid: 361 cells
        H = cs1_system()
        grids = discretize(H, 2 / 19)
        assert grids["a1"].n_cells == 361
        assert grids["a1"].tiles_exactly

    def test_single_cell(self):
        dyn = ModeDynamics(np.array([[0.5]]), np.array([[0.3]]), np.eye(1))
        H = HybridSystem(modes=[("a", dyn)], X=HyperRectangle([0.0], [1.0]), regions=[])
        grids = discretize(H, 1.0)
        assert grids["a"].n_cells == 1

    def test_rotating_mode_targets_are_axis_rects(self):
        H = rotated_system()
        grids = discretize(H, 0.5)
        grid = grids["a1"]
        assert not grid.tiles_exactly
        assert grid.n_cells > 0
        T = grid.action.whitening.T
        for rect, cell in zip(grid.rects, grid.cells):
            img = cell.vertices() @ T.T
            assert np.allclose(img.min(axis=0), rect.lower, atol=1e-9)
            assert np.allclose(img.max(axis=0), rect.upper, atol=1e-9)

    def test_original_side_near_dx(self):
        H = rotated_system()
        dx = 0.4
        grid = discretize(H, dx)["a1"]
        lam = grid.action.whitening.eigenvalues
        # interior cells have original-space side exactly dx per axis
        sides = grid.rects[0].extent * np.sqrt(lam)
        assert np.all(sides <= dx + 1e-9)

    def test_adaptive_refines_boundary(self):
        H = rotated_system()
        uniform = discretize(H, 0.5)["a1"]
        adaptive = discretize(H, 0.5, adaptive=(0.5, 0.25, False))["a1"]
        assert adaptive.n_cells > uniform.n_cells
        lam = adaptive.action.whitening.eigenvalues
        for rect, ins in zip(adaptive.rects, adaptive.inside):
            side = float(np.max(rect.extent * np.sqrt(lam)))
            if not ins:
                assert side <= 0.25 * (1 + 1e-6)

    def test_locate_tie_breaks_low(self):
        H = cs1_system()
        grid = discretize(H, 1.0)["a1"]  # 2 x 2 cells
        # x = 0 sits on the shared boundary of all four cells: lowest index wins
        assert grid.locate(np.array([0.0, 0.0])) == 0
        assert grid.locate(np.array([5.0, 0.0])) == -1


class TestLabels:
    def region_system(self):
        F = np.diag([0.5, 0.5])
        G = np.diag([0.2, 0.2])
        dyn = ModeDynamics(F, G, np.eye(2))
        X = HyperRectangle([-1, -1], [1, 1])
        r1 = HyperRectangle([0.0, 0.0], [1.0, 1.0])
        return HybridSystem(modes=[("a", dyn)], X=X, regions=[("p1", r1)])

    def test_cell_inside_region(self):
        H = self.region_system()
        grids = discretize(H, 0.5)
        under, over = label_states(H, grids)
        grid = grids["a"]
        for k, cell in enumerate(grid.cells):
            c = cell.center
            if np.all(c > 0.05):
                assert "p1" in under[k] and "p1" in over[k]

    def test_straddling_cell(self):
        # a 3-per-side grid makes the middle cells straddle the region edge
        H = self.region_system()
        grids = discretize(H, 2 / 3)
        under, over = label_states(H, grids)
        grid = grids["a"]
        found = False
        for k, cell in enumerate(grid.cells):
            lo = cell.vertices().min(axis=0)
            hi = cell.vertices().max(axis=0)
            crosses = (lo[0] < 0 < hi[0] and hi[1] > 0) or (lo[1] < 0 < hi[1] and hi[0] > 0)
            if crosses:
                assert "p1" not in under[k]
                assert "not_p1" not in under[k]
                assert "p1" in over[k]
                found = True
        assert found

    def test_region_respecting_grid_has_equal_labelings(self):
        H = self.region_system()
        grids = discretize(H, 0.5)  # grid lines land on the region boundary
        under, over = label_states(H, grids)
        assert under == over

    def test_sink_unlabeled(self):
        H = self.region_system()
        grids = discretize(H, 0.5)
        under, over = label_states(H, grids)
        assert under[-1] == frozenset() and over[-1] == frozenset()


class TestBuild:
    def test_single_cell_complement_identity(self):
        dyn = ModeDynamics(np.array([[0.5]]), np.array([[0.2]]), np.eye(1))
        X = HyperRectangle([-1.0], [1.0])
        H = HybridSystem(modes=[("a", dyn)], X=X, regions=[])
        grids = discretize(H, 2.0)
        imdp = build_imdp(H, grids)
        row = imdp.rows[0]["a"]
        assert list(row.targets) == [0, 1]
        # sink interval is the exact complement of the self-loop interval
        assert row.lo[1] == pytest.approx(1 - row.hi[0], abs=1e-9)
        assert row.hi[1] == pytest.approx(1 - row.lo[0], abs=1e-9)

    def test_cs1_build_feasible(self):
        H = cs1_system()
        grids = discretize(H, 2 / 19)
        imdp = build_imdp(H, grids)
        assert len(imdp.states) == 361
        report = validate(imdp)
        assert report.ok, report.violations

    def test_monte_carlo_row_bracketing(self):
        rng = np.random.default_rng(20)
        H = cs1_system()
        grids = discretize(H, 0.25)
        imdp = build_imdp(H, grids)
        grid = grids["a1"]
        dyn = H.dynamics("a1")
        W = grid.action.whitening.T
        n = 200_000
        for si in rng.choice(len(imdp.states), size=6, replace=False):
            row = imdp.rows[si]["a1"]
            cell = imdp.states[si].cell
            for _ in range(3):
                x = cell.base + cell.generators @ rng.uniform(size=2)
                w = rng.standard_normal((n, 2))
                y = (W @ dyn.F @ x)[None, :] + w  # next state, whitened frame
                # empirical frequency into every target interval of the row
                for t, lo, hi in zip(row.targets, row.lo, row.hi):
                    if t == imdp.sink:
                        orig = x @ dyn.F.T + w @ dyn.G.T
                        freq = np.mean(~np.all(np.abs(orig) <= 1.0, axis=1))
                    else:
                        rect = imdp.states[t].whitened
                        freq = np.mean(np.all((y >= rect.lower) & (y <= rect.upper), axis=1))
                    # binomial band around the claimed bracket, with a
                    # Poisson floor for near-zero probabilities
                    slack_lo = 4 * np.sqrt(max(lo * (1 - lo), 0.0) / n) + 10 / n
                    slack_hi = 4 * np.sqrt(max(hi * (1 - hi), 0.0) / n) + 10 / n
                    assert lo - slack_lo <= freq <= hi + slack_hi

    def test_rotated_build_feasible(self):
        H = rotated_system()
        grids = discretize(H, 0.5)
        imdp = build_imdp(H, grids)
        report = validate(imdp)
        assert report.ok, report.violations[:5]
        assert imdp.meta.get("sink_fallbacks", 0) > 0  # conservative path used

    def test_thread_count_invariance(self):
        H = cs1_system()
        grids1 = discretize(H, 0.25)
        imdp1 = build_imdp(H, grids1, threads=1)
        grids2 = discretize(H, 0.25)
        imdp2 = build_imdp(H, grids2, threads=3)
        for r1, r2 in zip(imdp1.rows, imdp2.rows):
            for a in r1:
                assert np.array_equal(r1[a].targets, r2[a].targets)
                assert np.array_equal(r1[a].lo, r2[a].lo)
                assert np.array_equal(r1[a].hi, r2[a].hi)


class TestValidate:
    def broken_imdp(self):
        H = cs1_system()
        grids = discretize(H, 1.0)
        return build_imdp(H, grids)

    def test_flags_lo_above_hi(self):
        imdp = self.broken_imdp()
        row = imdp.rows[0]["a1"]
        imdp.rows[0]["a1"] = SparseRow(row.targets, row.hi + 0.2, row.hi)
        rep = validate(imdp)
        assert any("lo > hi" in v for v in rep.violations)

    def test_flags_sum_hi_below_one(self):
        imdp = self.broken_imdp()
        row = imdp.rows[1]["a1"]
        imdp.rows[1]["a1"] = SparseRow(row.targets, row.lo * 0, row.lo * 0 + 1e-3)
        rep = validate(imdp)
        assert any("sum hi" in v for v in rep.violations)

    def test_flags_nonabsorbing_sink(self):
        imdp = self.broken_imdp()
        sink = imdp.sink
        imdp.rows[sink]["a1"] = SparseRow(np.array([0]), np.array([1.0]), np.array([1.0]))
        rep = validate(imdp)
        assert any("sink" in v for v in rep.violations)


class TestRefinement:
    def test_halving_dx_never_increases_eps_max(self):
        H = cs1_system()
        dfa = dfa_for_formula("G<=2 X", ["X"])
        eps = []
        for n_side in (10, 20, 40):
            grids = discretize(H, 2 / n_side)
            imdp = build_imdp(H, grids)
            out = synthesize(imdp, dfa)
            eps.append(out.eps_max)
        assert eps[0] >= eps[1] >= eps[2]
