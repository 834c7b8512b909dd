"""Coupled pressure/concentration flow on the disk against a known solution.

Each step solves a mean-zero Neumann pressure problem with P2 elements,
forms the Darcy velocity pointwise from the pressure gradient and advances
the P1 concentration by Crank-Nicolson.

    python demos/disk_displacement.py
"""
import numpy as np

from miscible_fem import error_norm, exact52, exact_velocity52, example52_problem, run_coupled

problem = example52_problem(final_time=0.5)
for M in (16, 32):
    res = run_coupled(problem, M, dt=2.0 ** -9)
    eu = error_norm(res.velocity, exact_velocity52, 0.5).value
    ec = error_norm(res.concentration, lambda x, y, t: exact52(x, y, t).c, 0.5).value
    print(f"M={M:3d}: |u_h - u|_inf = {eu:.3e}  |c_h - c|_inf = {ec:.3e}  "
          f"(pressure CG iterations {res.pressure_iterations})")

print("\nvelocity at a few points, discrete vs exact:")
for point in [(0.5, 0.5), (0.2, 0.6), (0.8, 0.3)]:
    ux, uy = exact_velocity52(np.array(point[0]), np.array(point[1]), 0.5)
    vx, vy = res.velocity(point)
    print(f"  {point}: ({vx:9.4f}, {vy:7.4f})  exact ({float(ux):9.4f}, {float(uy):7.4f})")
