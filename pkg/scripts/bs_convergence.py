"""Grid refinement of the degenerate-band call against the closed form.

Prints M, price, relative error and the observed order between rows.
"""

import math

from rvp.g_engine import GModel, bs_price, g_expectation

model = GModel(0.2, 0.2, V="x")
exact = bs_price(1.0, 1.0, 1.0, 0.2)
prev = None
print(f"{'M':>6} {'price':>12} {'rel_err':>10} {'order':>6}")
for M in (50, 100, 200, 400, 800):
    v = g_expectation("max(x-1,0)", model, "asset", M=M, with_error=False).value
    err = abs(v - exact) / exact
    order = "" if prev is None else f"{math.log2(prev / err):.2f}"
    print(f"{M:>6} {v:>12.8f} {err:>10.3e} {order:>6}")
    prev = err
