# %% [markdown]
# # Coarse-then-fine search with four detectors
#
# Every detector probes a different slice of the period in the same round.
# The relative delays between detectors are known, so whichever detector
# sees the peak fixes the windows for all of them.

# %%
from qsync import DelayTable, SearchPlan, run_method
from qsync.harness import build_scenario, resolve_config
from qsync.syncplan import window_error

cfg = resolve_config()
scenario = build_scenario(cfg)
delays = DelayTable((0, 30, 60, 90))

# %% [markdown]
# ## Fixed-step fine search

# %%
plan = SearchPlan(coarse_step_ps=120, fine_method="fixed_step")
out = run_method(scenario, plan, delays, "method1")
print("windows:", out.windows)
print("rounds: coarse", out.coarse_rounds, "fine", out.fine_rounds)
print("time:", out.simulated_time_ms, "ms   error:", window_error(out, scenario), "ps")

# %% [markdown]
# ## Interval-halving fine search
#
# With the coarse step at the pulse width a single coarse round covers the
# period; the fine stage shrinks the interval around the best probe.

# %%
plan2 = SearchPlan(coarse_step_ps=500, fine_method="nary")
out2 = run_method(scenario, plan2, delays, "method2")
print("windows:", out2.windows)
print("time:", out2.simulated_time_ms, "ms   error:", window_error(out2, scenario), "ps")

# %% [markdown]
# For contrast, scanning the whole period at the fine precision:

# %%
legacy = run_method(scenario, plan, delays, "legacy")
print("legacy time:", legacy.simulated_time_ms, "ms")
