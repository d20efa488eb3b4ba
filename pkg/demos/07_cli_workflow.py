"""End-to-end command-line workflow in a temporary directory.

Every command reads a JSON config (strictly validated, unknown keys are
rejected), writes its outputs with 17 significant digits, and drops a
sidecar manifest recording the resolved config, its hash, the seed, and the
library version.  Identical inputs produce byte-identical outputs.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args):
    cmd = [sys.executable, "-m", "nheavy.cli", *args]
    print("$ nheavy", " ".join(args))
    out = subprocess.run(cmd, capture_output=True, text=True)
    print(out.stdout, end="")
    if out.returncode != 0:
        print(out.stderr, end="")
    return out.returncode


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    run("gen-network", "--kind", "sbm", "--n", "10", "--k", "2",
        "--seed", "42", "--out", str(tmp / "net.csv"))

    sim_cfg = tmp / "sim.json"
    sim_cfg.write_text(json.dumps({
        "mode": "model",
        "network": str(tmp / "net.csv"),
        "params": {
            "phi": {"omega": 0.1, "alpha": 0.2, "lambda": 0.1, "beta": 0.55},
            "phi_r": {"omega": 0.1, "alpha": 0.3, "lambda": 0.2, "beta": 0.3},
        },
        "t_len": 500, "seed": 7, "out": str(tmp / "panel.csv"),
    }))
    run("simulate", "--config", str(sim_cfg))

    est_cfg = tmp / "est.json"
    est_cfg.write_text(json.dumps({
        "panel": str(tmp / "panel.csv"), "network": str(tmp / "net.csv"),
        "method": "one-step", "out": str(tmp / "fit.json"),
    }))
    run("estimate", "--config", str(est_cfg))

    fc_cfg = tmp / "fc.json"
    fc_cfg.write_text(json.dumps({
        "fit": str(tmp / "fit.json"), "network": str(tmp / "net.csv"),
        "panel": str(tmp / "panel.csv"), "horizons": 3,
        "out": str(tmp / "forecast.csv"),
    }))
    run("forecast", "--config", str(fc_cfg))
    print("forecast rows:")
    print((tmp / "forecast.csv").read_text().splitlines()[0])
    print((tmp / "forecast.csv").read_text().splitlines()[1])

    manifest = json.loads((tmp / "panel.csv.manifest.json").read_text())
    print("\nsimulation manifest keys:", sorted(manifest))
