import numpy as np
import pytest

from switchsynth.abstraction import HybridSystem
from switchsynth.cli import main
from switchsynth.formats import (
    ModelSpec,
    read_imdp,
    read_model,
    read_results,
    read_strategy,
    write_imdp,
    write_model,
)
from switchsynth.geometry import HyperRectangle
from switchsynth.kernel import ModeDynamics
from switchsynth.pipeline import build_abstraction, dfa_for_formula, synthesize


def cs1_spec(dx=0.25):
    F = np.diag([0.85, 0.90])
    G = np.diag([0.15, 0.05])
    dyn = ModeDynamics(F, G, np.eye(2))
    X = HyperRectangle([-1, -1], [1, 1])
    H = HybridSystem(modes=[("a1", dyn)], X=X, regions=[("X", X)])
    return ModelSpec(system=H, dx=dx)


def two_mode_spec(dx=0.4):
    d1 = ModeDynamics(np.diag([0.7, 0.7]), np.diag([0.2, 0.2]), np.eye(2))
    d2 = ModeDynamics(np.diag([0.4, 0.9]), np.diag([0.2, 0.2]), np.eye(2))
    X = HyperRectangle([-1, -1], [1, 1])
    green = HyperRectangle([0.2, 0.2], [0.8, 0.8])
    red = HyperRectangle([-0.8, -0.8], [-0.2, -0.2])
    H = HybridSystem(modes=[("a1", d1), ("a2", d2)],
                     X=X, regions=[("green", green), ("red", red)])
    return ModelSpec(system=H, dx=dx)


class TestModelFormat:
    def test_round_trip(self, tmp_path):
        spec = two_mode_spec()
        text = write_model(spec)
        back = read_model(text)
        assert back.dx == spec.dx
        assert back.system.mode_names == ["a1", "a2"]
        assert np.array_equal(back.system.X.lower, spec.system.X.lower)
        d0 = back.system.dynamics("a1")
        assert np.array_equal(d0.F, spec.system.dynamics("a1").F)
        assert write_model(back) == text  # serialisation is stable

    def test_continuous_round_trip(self):
        from switchsynth.bridge import CtHybridSystem, CtModeDynamics

        X = HyperRectangle([-8, -8], [8, 8])
        ct = CtModeDynamics(np.diag([-1.0, -0.5]), np.eye(2), 0.1)
        H_ct = CtHybridSystem(modes=[("a1", ct)], X=X, regions=[("X", X)], cov_w=np.eye(2))
        spec = ModelSpec(system=H_ct, dx=0.5, continuous=True, dt=0.1)
        back = read_model(write_model(spec))
        assert back.continuous and back.dt == 0.1
        assert np.array_equal(back.system.modes[0][1].F_c, ct.F_c)

    def test_malformed_rejected(self):
        from switchsynth.formats import ModelError

        with pytest.raises(ModelError):
            read_model("not a model\n")
        with pytest.raises(ModelError):
            read_model("switchsynth-v1 model\ndim 2\nnoise 2 1 0 0 1\n"
                       "mode a F 1 0 0 G 1 0 0 1\nsafe -1 -1 1 1\ndx 0.5\n")


class TestImdpFormat:
    def test_round_trip_bit_for_bit(self):
        spec = cs1_spec(dx=0.5)
        imdp = build_abstraction(spec)
        text = write_imdp(imdp)
        back = read_imdp(text)
        assert len(back.states) == len(imdp.states)
        for i in range(imdp.n_states):
            for a, row in imdp.rows[i].items():
                brow = back.rows[i][a]
                assert np.array_equal(row.targets, brow.targets)
                assert np.array_equal(row.lo, brow.lo)  # exact float round trip
                assert np.array_equal(row.hi, brow.hi)
        assert back.labels_under == imdp.labels_under
        assert back.labels_over == imdp.labels_over

    def test_synthesis_from_file_matches_memory(self):
        spec = cs1_spec(dx=0.5)
        imdp = build_abstraction(spec)
        back = read_imdp(write_imdp(imdp))
        dfa = dfa_for_formula("G<=4 X", ["X"])
        out_mem = synthesize(imdp, dfa)
        out_file = synthesize(back, dfa)
        for a, b in zip(out_mem.intervals, out_file.intervals):
            assert a.lo == b.lo and a.hi == b.hi  # bit-for-bit


class TestCliCommands:
    def write_files(self, tmp_path, spec):
        model = tmp_path / "model.txt"
        model.write_text(write_model(spec))
        return model

    def test_abstract_synthesize_heatmap(self, tmp_path):
        model = self.write_files(tmp_path, cs1_spec(dx=0.5))
        imdp_file = tmp_path / "out.imdp"
        assert main(["abstract", str(model), "-o", str(imdp_file)]) == 0
        results = tmp_path / "res.txt"
        strat = tmp_path / "strat.txt"
        code = main(["synthesize", str(imdp_file), "--formula", "G<=3 X",
                     "-o", str(results), "--strategy", str(strat)])
        assert code == 0
        res = read_results(results.read_text())
        assert len(res.records) == 16
        hm = tmp_path / "heat.txt"
        assert main(["export-heatmap", str(results), "--mode", "a1", "-o", str(hm)]) == 0
        rows = [ln.split() for ln in hm.read_text().splitlines()]
        assert len(rows) == 16
        # heatmap values match the results file
        for row, rec in zip(rows, res.records):
            assert float(row[2]) == rec["p_lo"]

    def test_synthesize_direct_from_model(self, tmp_path):
        model = self.write_files(tmp_path, cs1_spec(dx=0.5))
        results = tmp_path / "res.txt"
        assert main(["synthesize", str(model), "--formula", "G<=2 X", "-o", str(results)]) == 0
        res = read_results(results.read_text())
        assert res.summary["eps_max"] <= 1.0

    def test_exit_code_model_error(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("switchsynth-v1 model\ndim 2\nnoise 2 1 0 0 1\n"
                       "mode a1 F 1 0 0 G 0.1 0 0 0.1\nsafe -1 -1 1 1\ndx 0.5\n")
        out = tmp_path / "o.imdp"
        assert main(["abstract", str(bad), "-o", str(out)]) == 2

    def test_exit_code_formula_error(self, tmp_path):
        model = self.write_files(tmp_path, cs1_spec(dx=0.5))
        out = tmp_path / "res.txt"
        # unsupported formula without an explicit automaton
        assert main(["synthesize", str(model), "--formula", "X (X X)", "-o", str(out)]) == 3
        assert main(["synthesize", str(model), "--formula", "G<=2 (", "-o", str(out)]) == 3

    def test_exit_code_numerical_failure(self, tmp_path):
        # rank-deficient diffusion: the one-step covariance cannot be whitened
        bad = tmp_path / "singular.txt"
        bad.write_text("switchsynth-v1 model\ndim 2\nnoise 2 1 0 0 1\n"
                       "mode a1 F 0.5 0 0 0.5 G 1 0 0 0\nsafe -1 -1 1 1\n"
                       "region X box -1 -1 1 1\ndx 0.5\n")
        out = tmp_path / "o.imdp"
        assert main(["abstract", str(bad), "-o", str(out)]) == 5

    def test_exit_code_heatmap_unsupported(self, tmp_path):
        dyn = ModeDynamics(0.5 * np.eye(3), 0.2 * np.eye(3), np.eye(3))
        X = HyperRectangle([-1, -1, -1], [1, 1, 1])
        H = HybridSystem(modes=[("a1", dyn)], X=X, regions=[("X", X)])
        model = self.write_files(tmp_path, ModelSpec(system=H, dx=1.0))
        res = tmp_path / "res.txt"
        assert main(["synthesize", str(model), "--formula", "G<=2 X", "-o", str(res)]) == 0
        assert main(["export-heatmap", str(res), "--mode", "a1"]) == 4

    def test_verify_command(self, tmp_path):
        model = self.write_files(tmp_path, cs1_spec(dx=0.5))
        res = tmp_path / "res.txt"
        assert main(["verify", str(model), "--formula", "G<=2 X",
                     "--mode", "pessimistic", "-o", str(res)]) == 0
        assert main(["verify", str(model), "--formula", "G<=2 X",
                     "--mode", "optimistic", "-o", str(res)]) == 0

    def test_simulate_round_trip(self, tmp_path):
        model = self.write_files(tmp_path, two_mode_spec(dx=0.4))
        res = tmp_path / "res.txt"
        strat = tmp_path / "strat.txt"
        assert main(["synthesize", str(model), "--formula", "!red U green",
                     "-o", str(res), "--strategy", str(strat)]) == 0
        sf = read_strategy(strat.read_text())
        assert sf.labeling == "under"
        assert sf.choices
        rep = tmp_path / "sim.txt"
        code = main(["simulate", str(model), "--strategy", str(strat),
                     "-n", "500", "--seed", "9", "--start", "0.5,0.5",
                     "--start-mode", "a1", "-o", str(rep)])
        assert code == 0
        text = rep.read_text()
        assert "frequency" in text and "seed 9" in text

    def test_simulate_zero_runs(self, tmp_path):
        model = self.write_files(tmp_path, two_mode_spec(dx=0.4))
        res = tmp_path / "res.txt"
        strat = tmp_path / "strat.txt"
        main(["synthesize", str(model), "--formula", "!red U green",
              "-o", str(res), "--strategy", str(strat)])
        rep = tmp_path / "sim.txt"
        assert main(["simulate", str(model), "--strategy", str(strat),
                     "-n", "0", "-o", str(rep)]) == 0
        assert "runs 0" in rep.read_text()

    def test_simulate_seed_determinism(self, tmp_path):
        model = self.write_files(tmp_path, two_mode_spec(dx=0.4))
        res = tmp_path / "res.txt"
        strat = tmp_path / "strat.txt"
        main(["synthesize", str(model), "--formula", "!red U green",
              "-o", str(res), "--strategy", str(strat)])
        reps = []
        for _ in range(2):
            rep = tmp_path / "sim.txt"
            main(["simulate", str(model), "--strategy", str(strat),
                  "-n", "300", "--seed", "11", "--start", "0.0,0.0", "-o", str(rep)])
            reps.append(rep.read_text())
        assert reps[0] == reps[1]

    def test_threads_do_not_change_output(self, tmp_path):
        model = self.write_files(tmp_path, cs1_spec(dx=0.25))
        outs = []
        for t in ("1", "3"):
            out = tmp_path / f"o{t}.imdp"
            assert main(["--threads", t, "abstract", str(model), "-o", str(out)]) == 0
            outs.append(out.read_text())
        assert outs[0] == outs[1]

    def test_continuous_model_routes_through_bridge(self, tmp_path):
        from switchsynth.bridge import CtHybridSystem, CtModeDynamics

        X = HyperRectangle([-8, -8], [8, 8])
        ct = CtModeDynamics(np.diag([-1.0, -0.5]), np.eye(2), 0.1)
        H_ct = CtHybridSystem(modes=[("a1", ct)], X=X, regions=[("X", X)], cov_w=np.eye(2))
        model = self.write_files(tmp_path, ModelSpec(system=H_ct, dx=2.0, continuous=True, dt=0.1))
        out = tmp_path / "o.imdp"
        assert main(["abstract", str(model), "-o", str(out)]) == 0
        imdp = read_imdp(out.read_text())
        assert len(imdp.states) == 64
