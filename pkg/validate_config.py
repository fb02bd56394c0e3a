#!/usr/bin/env python3
"""
Preflight check for a simulator experiment config.

Usage: python validate_config.py fixtures/experiment.env

Loads the config, then parses every input file it names, so problems show up
before a long simulate run rather than halfway through it.
"""

import sys
from pathlib import Path

# Add app to path
sys.path.insert(0, str(Path(__file__).parent))


def validate_environment():
    """Show process settings taken from the environment."""
    print("\n" + "=" * 60)
    print("VALIDATING ENVIRONMENT")
    print("=" * 60 + "\n")

    from app.config import settings

    if settings.LOG_FORMAT not in ("human", "json"):
        print(f"❌ LOG_FORMAT={settings.LOG_FORMAT!r} (expected 'human' or 'json')")
        return False
    print(f"✅ LOG_LEVEL   = {settings.LOG_LEVEL}")
    print(f"✅ LOG_FORMAT  = {settings.LOG_FORMAT}")
    print(f"✅ LOG_FILE    = {settings.LOG_FILE or '(stderr only)'}")
    print(f"✅ SATSIM_JOBS = {settings.SATSIM_JOBS}")
    return True


def validate_experiment(config_path):
    """Load the experiment config; returns it or None."""
    print("\n" + "=" * 60)
    print("VALIDATING EXPERIMENT CONFIG")
    print("=" * 60 + "\n")

    from app.config import load_experiment_config
    from app.errors import ConfigError

    try:
        cfg = load_experiment_config(config_path)
    except ConfigError as e:
        print(f"❌ {e}")
        return None

    print(f"✅ Loaded {config_path}")
    print(f"✅ seed        = {cfg.seed}")
    print(f"✅ config hash = {cfg.config_hash()}")
    print(f"✅ strategy    = {cfg.strategy}, K = {cfg.analysis_k_values}")
    steps = cfg.timeline_duration_s // cfg.timeline_step_s
    print(f"✅ timeline    = {steps} steps of {cfg.timeline_step_s}s")
    if cfg.measured is None:
        print("⚠ No 'measured' file: the calibrate stage will refuse to run")
    return cfg


def validate_inputs(cfg):
    """Parse every input file the config names."""
    print("\n" + "=" * 60)
    print("VALIDATING INPUT FILES")
    print("=" * 60 + "\n")

    from app import datasets
    from app.errors import SatsimError
    from app.models import unique_pairs

    all_valid = True
    relays = None

    checks = [
        ("terrestrial_baseline", lambda: datasets.load_terrestrial_baseline(cfg.terrestrial_baseline)),
        ("satellite_baseline", lambda: datasets.load_satellite_baseline(cfg.satellite_baseline)),
        ("tle", lambda: datasets.load_tle(cfg.tle)),
        ("stations", lambda: datasets.load_sites(cfg.stations)),
        ("pops", lambda: datasets.load_sites(cfg.pops)),
        ("relays", lambda: datasets.load_relays(cfg.relays)),
    ]
    if cfg.measured is not None:
        checks.append(("measured", lambda: datasets.load_measured(cfg.measured)))

    for name, load in checks:
        try:
            rows = load()
            print(f"✅ {name:<22} {len(rows)} record(s)")
            if name == "relays":
                relays = rows
        except SatsimError as e:
            print(f"❌ {name:<22} {e}")
            all_valid = False

    if relays is not None:
        try:
            circuits = datasets.load_circuits(cfg.circuits, relays)
            print(f"✅ {'circuits':<22} {len(circuits)} circuit(s), {len(unique_pairs(circuits))} unique hop(s)")
        except SatsimError as e:
            print(f"❌ {'circuits':<22} {e}")
            all_valid = False
    else:
        print(f"⚠ {'circuits':<22} skipped (relays did not load)")

    return all_valid


def main():
    """Run all validation checks."""
    if len(sys.argv) != 2:
        print("Usage: python validate_config.py <experiment config>")
        return 2

    print("\n" + "=" * 70)
    print("SATSIM CONFIGURATION VALIDATOR")
    print("=" * 70)

    results = [("Environment", validate_environment())]
    cfg = validate_experiment(sys.argv[1])
    results.append(("Experiment Config", cfg is not None))
    if cfg is not None:
        results.append(("Input Files", validate_inputs(cfg)))

    print("\n" + "=" * 70)
    print("VALIDATION SUMMARY")
    print("=" * 70 + "\n")

    for check_name, passed in results:
        status = "✅ PASS" if passed else "❌ FAIL"
        print(f"{status}  {check_name}")

    failed = sum(1 for _, passed in results if not passed)
    print("\n" + "=" * 70)
    if not failed:
        print("✅ ALL VALIDATION CHECKS PASSED!")
        print("=" * 70 + "\n")
        return 0
    print(f"❌ {failed} VALIDATION CHECK(S) FAILED")
    print("=" * 70 + "\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
