# %% [markdown]
# # Convergence on the unit sphere
#
# Runs a small study (p=1,2 and m=1,2) for the plane-wave density error
# against the Mie series and the exterior field error for a Hertz dipole
# placed inside the sphere, then prints observed orders. The density error
# should decay like h^p and the field error roughly like h^(2p+1).
# A few minutes and about 1 GB.

# %%
import tempfile

from isoefie.study import StudyConfig, emit_rate_table, read_csv, run_study

out = tempfile.mkdtemp(prefix="sphere_study_")
config = StudyConfig(degrees=[1, 2], levels=[1, 2], output=out)
results = run_study(config)

# %%
rows = read_csv(f"{out}/results.csv")
for r in rows:
    print(f"p={r['p']} m={r['m']} dofs={r['dofs_real']:>4} iters={r['gmres_iters']:>4} "
          f"dp={float(r['dp_error']):.3e} mie={float(r['mie_l2_error']):.3e}")
print()
print(emit_rate_table(rows))
print("files written to", out)
