"""End-to-end run through the text formats and the command line.

Writes a model file, abstracts it, synthesises against a formula, exports
the heatmap table and replays the stored strategy by simulation — exactly
what `switchsynth <subcommand>` does from a shell.

Run:  python demos/06_cli_files.py
"""

import tempfile
from pathlib import Path

import numpy as np

from switchsynth import HybridSystem, HyperRectangle, ModeDynamics
from switchsynth.cli import main
from switchsynth.formats import ModelSpec, read_results, write_model

H = HybridSystem(
    modes=[
        ("a1", ModeDynamics(np.diag([0.7, 0.7]), np.diag([0.2, 0.2]), np.eye(2))),
        ("a2", ModeDynamics(np.diag([0.4, 0.9]), np.diag([0.2, 0.2]), np.eye(2))),
    ],
    X=HyperRectangle([-1, -1], [1, 1]),
    regions=[
        ("green", HyperRectangle([0.2, 0.2], [0.8, 0.8])),
        ("red", HyperRectangle([-0.8, -0.8], [-0.2, -0.2])),
    ],
)

work = Path(tempfile.mkdtemp(prefix="switchsynth-demo-"))
model = work / "model.txt"
model.write_text(write_model(ModelSpec(system=H, dx=0.25)))
print("model file:", model)

imdp_file = work / "abstraction.imdp"
assert main(["abstract", str(model), "-o", str(imdp_file)]) == 0

results = work / "results.txt"
strategy = work / "strategy.txt"
assert main([
    "synthesize", str(imdp_file), "--formula", "!red U green",
    "-o", str(results), "--strategy", str(strategy),
]) == 0

res = read_results(results.read_text())
print("summary:", {k: round(v, 4) if isinstance(v, float) else v
                   for k, v in res.summary.items()})

heat = work / "heatmap_a1.txt"
assert main(["export-heatmap", str(results), "--mode", "a1", "-o", str(heat)]) == 0
print("heatmap rows (x_center y_center p_lo):")
for line in heat.read_text().splitlines()[:3]:
    print("  ", line)
print("   ...")

report = work / "simulation.txt"
assert main([
    "simulate", str(model), "--strategy", str(strategy),
    "-n", "2000", "--seed", "1", "--start", "0.9,-0.9", "--start-mode", "a1",
    "-o", str(report),
]) == 0
print("\nsimulation report:")
print(report.read_text())
