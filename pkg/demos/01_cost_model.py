# %% [markdown]
# # Choosing the coarse step
#
# A coarse round splits one pulse period across the detectors, so a wide
# step means few coarse rounds but a long fine search afterwards. The
# cost model counts both and we simply scan the step.

# %%
from qsync import optimize_coarse_step, sync_cost

grid = range(10, 501, 10)
costs = {t: sync_cost(t) for t in grid}

# %%
for t in (10, 50, 100, 120, 160, 200, 500):
    print(f"t = {t:3d} ps  ->  {costs[t]:5.1f} ms")

# %% [markdown]
# The minimum is flat; ties go to the smaller step.

# %%
best_t, best_ms = optimize_coarse_step(grid)
print("optimum:", best_t, "ps,", best_ms, "ms")
