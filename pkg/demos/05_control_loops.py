"""
Timing lock and polarization tracking
=====================================

Bob's clock runs 20 ppm off Alice's. While searching he holds his LO timing
still and lets the drift sweep her reference pulse into view. Once locked he
follows it with early/late samples, moving at most 1 ns per period.

Fiber birefringence drifts over hours. A hill climb over four actuators keeps
the reference pulse in Bob's reference polarization.
"""

# %%
import numpy as np

from cvqkd_lab.sync import PolScenario, TimingParams, events_csv, run_polarization, simulate_timing

trace = simulate_timing(1_000_000, TimingParams(), np.random.default_rng(5), hold_periods=5000)
print(f"locked on the reference at period {trace.true_lock_period}")
print(f"largest timing step {trace.max_slew_ns()} ns")
print(events_csv(trace.events[:5]))

# %%
sc = PolScenario()
on = run_polarization(sc, True, np.random.default_rng(6))
off = run_polarization(sc, False, np.random.default_rng(6))
print("hour  corrected  uncorrected  (reference photons)")
for i in range(0, on.hours.size, 36):
    print(f"{on.hours[i]:4.0f}  {on.photons[i]:9.0f}  {off.photons[i]:11.0f}")
print(f"mean / initial: corrected {on.mean_ratio():.3f}, uncorrected {off.mean_ratio():.3f}")
