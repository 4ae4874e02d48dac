"""Leave-one-year-out verification on a small synthetic domain."""
from wamcast import GridSpec, SynthConfig, expected_skill_bound, generate, label_dataset
from wamcast.verify import Dataset, EvalConfig, loocv, verification_report

config = SynthConfig(grid=GridSpec(8.0, -12.0, 4, 8, 1.0), years=15, seed=11)
cubes, panel, _ = generate(config)
cube = cubes["observed"]
labels = label_dataset(cube)

# Passing the rainfall lets each fold relabel its training years from their own climatology.
data = Dataset(config.grid, labels, panel, (cube,))
print(f"Holding out each of {labels.n_years} years in turn...")
res = loocv(data, "dryspell", EvalConfig())
report = verification_report(res)

r_bound, mae_bound = expected_skill_bound(config)
o = report.onset
print(f"\nOnset over {report.n_folds} folds:")
print(f"  MAE {o['mae']:.2f} days (a perfect linear model would score about {mae_bound:.2f})")
print(f"  RMSE {o['rmse_spatial_first']:.2f} spatial-first, {o['rmse_temporal_first']:.2f} temporal-first")
print(f"  mean temporal r {o['temporal_correlation_summary']['mean']:.2f} (population bound {r_bound:.2f})")
print(f"  significant at 95%: {o['frac_significant_95']:.0%} of pixels")
print(f"  skill vs training-mean climatology {o['skill']:.2f}")
print(f"  anomaly correlation, mean over years {o['anomaly_correlation_summary']['mean']:.2f}")

d = report.dryspell
print(f"\nDry spells: ROC-AUC {d['roc_auc']:.2f}, proportion MAE {d['proportion_mae']:.3f}\n")
print(report.classification_text)
