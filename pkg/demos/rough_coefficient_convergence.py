"""Backward Euler on the unit square with a Lipschitz but rough coefficient.

The coefficient 3 + 0.1 s^3 sin(1/s^2), s = x + y - t, has a bounded first
derivative that oscillates without limit near the moving line s = 0. There
is no closed-form solution, so convergence is read off differences between
solutions on nested meshes.

    python demos/rough_coefficient_convergence.py
"""
from miscible_fem import StudyConfig, run_convergence

config = StudyConfig.default("ex51", mesh_levels=(8, 16, 32, 64))
report = run_convergence(config, progress=print)

print()
print(f"{'h':>10} {'max |u_h - u_h/2|':>20} {'rate':>8}")
for h, diff, r in report.rows:
    print(f"{h:10.5f} {diff:20.4e} {'' if r is None else f'{r:8.3f}'}")
print(f"\nfinest-pair rate {report.rates['diff_Linf']:.3f}; "
      f"differences decrease monotonically: {report.monotone['diff_Linf']}")
