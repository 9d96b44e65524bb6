"""Girsanov-tilted call against the driftless PDE price under refinement."""

from rvp.acceptance import girsanov_model
from rvp.g_engine import density_normalisation, g_expectation, girsanov_price

model = girsanov_model()
ref = g_expectation("max(x-1,0)", model.driftless(), "asset", M=1600, with_error=False).value
print(f"driftless reference (M=1600): {ref:.8f}")
print(f"{'steps':>6} {'M':>6} {'tilted':>12} {'|diff|':>10}")
for n, M in ((25, 100), (50, 200), (100, 400), (200, 800)):
    r = girsanov_price("max(x-1,0)", model, n_steps=n, M=M, driftless=ref)
    print(f"{n:>6} {M:>6} {r.value:>12.8f} {r.difference:>10.3e}")
for form in ("sde", "exp"):
    print(f"E_G[density] on 10-step lattice ({form}): {density_normalisation(model, 10, form):.12f}")
