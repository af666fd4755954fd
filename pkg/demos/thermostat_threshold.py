"""Where does the safe controller switch the heater off?

Solves the bundled thermostat benchmark with both abstractions and sweeps the
initial temperature mean. With a cold start the heater is switched on; past a
threshold around 18.7 to 18.8 degrees the controller leaves it off.

    python demos/thermostat_threshold.py [--iq 30]
"""

import argparse

from hybrid_safety.cli import RunConfig, action_flip, solve_run, sweep_grid, sweep_rows
from hybrid_safety.model import thermostat_config_path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iq", type=int, default=30, help="RBF components for the Gaussian backend")
    args = ap.parse_args()

    mu0s = sweep_grid(17.5, 22.0, 0.1)
    for backend in ("finite", "gaussian"):
        cfg = RunConfig(config=str(thermostat_config_path()), backend=backend, iq=args.iq)
        run = solve_run(cfg)
        rows, _ = sweep_rows(run, mu0s)
        flip = action_flip(mu0s, [r["action"] for r in rows])
        print(f"{backend:>8}: solved in {run.seconds:5.1f}s, heater off from mu0 = {flip}")
        for r in rows[::5]:
            bar = "#" * int(round(40 * r["value"]))
            print(f"    mu0={r['mu0']:5.1f}  action={r['action']}  value={r['value']:.3f} {bar}")


if __name__ == "__main__":
    main()
