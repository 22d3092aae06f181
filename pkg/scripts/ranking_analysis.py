"""Why the controller ranking comes out the way it does: learned models against an oracle MPC.

    PYTHONPATH=src python3 scripts/ranking_analysis.py --epochs 2000

Runs the six standard scenarios with NNSEM-MPC, the perturbed-prior SD-MPC, and an "oracle" SD-MPC
whose model is the exact plant (up to Euler versus RK4 discretization). If the oracle scores about
the same as the perturbed prior, the remaining gap is not model error the learned model could close.
"""
import argparse

from helmkeeper.benchmark import metrics, run, standard_scenarios
from helmkeeper.cli import build_model
from helmkeeper.config import ProjectConfig
from helmkeeper.models import SDModel
from helmkeeper.sysid import TrainConfig, generate_maneuvers, train
from helmkeeper.vessel import Wind

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ProjectConfig()
    data = generate_maneuvers(cfg.vessel, [Wind(*w) for w in cfg.winds], seed=args.seed)
    nn, _ = train(build_model("nnsem", cfg, args.seed), data, TrainConfig(epochs=args.epochs, seed=args.seed))
    setups = {
        "NNSEM": ("NNSEM-MPC", {"nnsem": nn}),
        "SD-prior": ("SD-MPC", {"sd": build_model("sd", cfg, args.seed)}),
        "SD-oracle": ("SD-MPC", {"sd": SDModel(cfg.vessel)}),
    }
    print(f"{'scenario':<9}" + "".join(f"{k:>22}" for k in setups))
    for sc in standard_scenarios():
        cells = []
        for controller, models in setups.values():
            rep = metrics(run(sc, controller, models, seed=args.seed), sc.goal)
            cells.append(f"ps {rep.ps:6.2f} ({rep.e_d:4.2f} m)")
        print(f"{sc.name:<9}" + "".join(f"{c:>22}" for c in cells), flush=True)
