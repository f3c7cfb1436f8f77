"""
Excess noise grows with modulation variance
===========================================

Residual phase noise turns part of every symbol into noise, so the excess
noise scales as xi = V_A * delta_phi. Fitting a line through the origin over
several V_A values recovers delta_phi.
"""

# %%
from dataclasses import replace

from cvqkd_lab import Link, LinkConfig
from cvqkd_lab.estimation import average_results, fit_phase_noise

base = LinkConfig()
points, weights = [], []
for i, v_a in enumerate((5.0, 10.0, 15.0, 20.0, 25.0)):
    cfg = replace(base, v_a=v_a)
    outs = [o for o in Link(cfg, 100 + i).run(20) if o.accepted]
    avg = average_results([o.estimate(cfg) for o in outs])
    points.append((v_a, avg.xi_hat))
    weights.append(avg.xi_stderr)
    print(f"V_A {v_a:5.1f}  xi {avg.xi_hat:.3f} +- {avg.xi_stderr:.3f}  ({len(outs)} packets)")

slope, err = fit_phase_noise(points, weights)
print(f"delta_phi fit {slope:.4f} +- {err:.4f}  (injected {base.channel.phase_variance})")
