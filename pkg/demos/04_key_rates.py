"""
Key rate versus distance and block size
=======================================

The asymptotic rate is beta I_AB - chi_BE. With finite blocks, Alice and Bob
must assume the worst channel consistent with their estimates and pay a
privacy-amplification penalty. Half of the symbols go to estimation.
"""

# %%
import numpy as np

from cvqkd_lab.security import (
    DEFAULT_VA_GRID,
    FiniteSizeInput,
    SecurityInput,
    distance_sweep,
    fiber_transmission,
    optimize_va,
    table1,
)

base = SecurityInput(v_a=1.0, t=1.0)
rows = distance_sweep(np.arange(0, 51, 10), base, delta_phi=0.034)
fixed = distance_sweep(np.arange(0, 51, 10), base, delta_phi=0.034, v_a=1.0)
print("distance  V_A opt  rate opt (kbps)  rate V_A=1 (kbps)")
for r, f in zip(rows, fixed):
    print(f"{r.distance_km:6.0f}  {r.v_a:7.2f}  {r.result.r_inf_bps / 1e3:15.3f}  {f.result.r_inf_bps / 1e3:17.3f}")

# %%
# Collection time needed for a positive finite-size rate grows quickly with
# distance. These are the four rows of the rate table.
for d, hours, expected, res in table1():
    print(f"{d:4.0f} km  {hours:6.1f} h  {res.r_fs_bps / 1e3:.3f} kbps  (table: {expected})")

# %%
# The finite-size rate approaches half the asymptotic rate as N grows.
fixed_in = SecurityInput(v_a=1.0, t=fiber_transmission(20))
for n in 10.0 ** np.arange(8, 15, 2):
    opt = optimize_va(DEFAULT_VA_GRID, fixed_in, FiniteSizeInput.from_total(n), 0.034)
    print(f"N = {n:.0e}: {opt.result.r_fs_bps / 1e3:.4f} kbps at V_A {opt.v_a:.2f}")
