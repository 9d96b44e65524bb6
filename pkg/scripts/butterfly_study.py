"""Butterfly under the band [0.1, 0.3]: superhedging price versus the two
constant-volatility prices, by PDE, Markov DP and exhaustive enumeration."""

from rvp.g_engine import GModel, exhaustive_value, g_expectation, markov_value

FLY = "max(x-0.9,0)-2*max(x-1,0)+max(x-1.1,0)"
model = GModel(0.1, 0.3, V="x")

pde = g_expectation(FLY, model, "asset").value
lo = g_expectation(FLY, model.single(0.1), "asset", with_error=False).value
hi = g_expectation(FLY, model.single(0.3), "asset", with_error=False).value
print(f"PDE band price      {pde:.6f}")
print(f"constant sigma=0.1  {lo:.6f}")
print(f"constant sigma=0.3  {hi:.6f}")
for n in (4, 6, 8, 10):
    ex = exhaustive_value(FLY, model, n, "asset")
    dp = markov_value(FLY, model, n, "asset").value
    print(f"steps={n:>2}  exhaustive {ex:.6f}  dp {dp:.6f}")
