"""
Seeded experiments and their CSV output
=======================================

Every experiment is a function of its config: the same seed gives the same
bytes, whatever the worker count. The CLI is a thin layer over this.
"""
import subprocess
import sys

from frmofdm.experiments import parse_overrides, rows_to_csv, run_experiment

# %%
# A small sum-rate sweep over the number of RIS elements, random phases.
cfg = parse_overrides(["M=2", "N=8", "sweep_var=N", "sweep_values=8,16,32", "optimizer=none",
                       "trials=5", "seed=4"])
text = rows_to_csv(run_experiment("rate-sweep", cfg))
for line in text.splitlines():
    if line.startswith("experiment") or ",-1," in line:
        print(line)

# %%
# The CLI with the same overrides prints identical CSV.
cmd = [sys.executable, "-m", "frmofdm", "rate-sweep", "--seed", "4", "--trials", "5",
       "--set", "M=2", "--set", "N=8", "--set", "sweep_var=N", "--set", "sweep_values=8,16,32",
       "--set", "optimizer=none"]
out = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
print("CLI output identical:", out == text)

# %%
# The invariant suite.
print(subprocess.run([sys.executable, "-m", "frmofdm", "selftest"], capture_output=True,
                     text=True).stdout)
