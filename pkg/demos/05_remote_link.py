# %% [markdown]
# # Calibrating over the wire
#
# The same search runs against a detector simulator on the other end of a
# socket. Counts come back identical to the in-process run.

# %%
from qsync import DelayTable, SearchPlan, run_method
from qsync.harness import build_scenario, resolve_config
from qsync.link import LinkServer, remote_source

scenario = build_scenario(resolve_config())
plan = SearchPlan(coarse_step_ps=120)
delays = DelayTable((0, 30, 60, 90))

# %%
with LinkServer(scenario).start() as server:
    with remote_source(server.endpoint, scenario) as src:
        remote = run_method(src, plan, delays, "method1")
local = run_method(scenario, plan, delays, "method1")
print("remote:", remote.windows)
print("local: ", local.windows)
print("same probes:", remote.probes == local.probes)
