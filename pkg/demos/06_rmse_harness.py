"""Monte Carlo harness: full pipeline from network draw to parameter RMSE.

Each replication draws a fresh network, simulates intraday prices, adds
noise, builds the realized-measure panel with the multi-scale estimator,
fits the model, and compares the estimates against the reference vector.
Failed replications are excluded and counted, never silently dropped.
"""

from nheavy import HarnessDesign, rmse_harness

theta0 = (0.1, 0.05, 0.5, 0.3, 0.1, 0.3)
design = HarnessDesign(
    generator="sbm", n=10, t_len=60, m_ticks=78,
    theta0=theta0, q_reps=5, estimator="two-step",
    tau_scale=1.0, noise_sd=0.001,
)

table = rmse_harness(design, seed=51)
print(f"{'name':<10}{'reference':>10}{'mean est':>12}{'rmse':>12}")
for name, t0, m, r in zip(table.param_names, table.theta0,
                          table.mean_estimate, table.rmse):
    print(f"{name:<10}{t0:>10.3f}{m:>12.4f}{r:>12.4f}")
print(f"replications: {table.n_completed} completed, {table.n_failed} failed")
print(f"mean network density {table.mean_density:.1%}")
print("\nnote: the intraday diffusion here has constant daily variance per")
print("asset, so the autoregressive coefficients are weakly identified and")
print("their RMSEs stay large regardless of the sample size; the harness")
print("reports what the pipeline actually delivers.")
