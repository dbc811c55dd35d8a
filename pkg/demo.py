import sys
try:
    # This script assumes the runner is saved as 'benchmark.py'
    from benchmark import Benchmark
    from src.config import EXPERIMENT_IDS, load_config
    from src.errors import NsoError
except ImportError as e:
    print(f"Error: Could not import the benchmark runner ({e}).")
    print("Please run this demo from the repository root.")
    sys.exit()

DESCRIPTIONS = {
    'exp1': "One-state hysteresis (rate-independent, Matern52 test kernel)",
    'exp2': "One-state hysteresis with |d| coupling",
    'exp3': "Two-state hysteresis with latent y (slow sine drive)",
    'exp4': "Two-state hysteresis with latent y (Matern32 test kernel)",
    'exp5a': "Exp 1 with 20% training noise, plus SINDy / Lasso on raw data",
    'exp5b': "Exp 1 trained on 20-point data, plus SINDy / Lasso on raw data",
    'exp6': "Exp 4 with a threshold sweep (0.1, 0.01, 0.001)",
}

# (n_train, n_test, stage2_count, epochs, width, modes, proj_width)
SCALES = {
    'quick': (100, 60, 50, 30, 16, 12, 32),
    'reduced': (300, 300, 300, 150, 64, 32, 128),
    'full': (1000, 1000, 500, 500, 64, 32, 128),
}


def print_menu():
    """Displays the main menu of experiment choices."""
    print("\n--- Hysteresis Operator Demo ---")
    print("Please choose an experiment to run:")
    for i, name in enumerate(EXPERIMENT_IDS, start=1):
        print(f"  [{i}] {name}: {DESCRIPTIONS[name]}")
    print("  ------------------------------")
    print("  [q] Quit")
    print("---------------------------------")


def prompt_for_scale():
    """
    Asks the user for a scale preset.
    Returns: one of the SCALES keys.
    """
    while True:
        scale = input("  ... Enter scale (quick / reduced / full): ").strip().lower()
        if not scale:
            continue
        if scale in SCALES:
            return scale
        print("      ❌ Unknown scale. Please enter quick, reduced or full.")


def config_for(experiment, scale):
    n_train, n_test, stage2, epochs, width, modes, proj_width = SCALES[scale]
    fno = {'width': width, 'modes': modes, 'proj_width': proj_width, 'epochs': epochs,
           'batch_size': min(100, n_train)}
    return load_config(experiment=experiment, n_train=n_train, n_test=n_test, stage2_count=stage2,
                       fno=fno, output_dir=f"results/{experiment}_{scale}")


def print_table(manifest):
    print(f"\n{'kernel':<10}{'method':<20}{'R':>12}{'RMSE':>12}{'MAE':>12}")
    for row in manifest.metrics:
        print(f"{row['kernel']:<10}{row['method']:<20}"
              f"{row['relative_l2']:>12.3e}{row['rmse']:>12.3e}{row['mae']:>12.3e}")


def main():
    """
    Main demo loop that prompts the user to select
    an experiment and a scale, then shows the results.
    """
    print("NOTE: This demo runs the full pipeline (data, training, discovery,")
    print("evaluation) and prints the metric table to the console.")
    print("--------------------------------------------------\n")

    while True:
        print_menu()
        choice = input("Enter your choice: ").strip().lower()

        if choice == 'q':
            print("Goodbye!")
            break

        if not choice.isdigit() or not 1 <= int(choice) <= len(EXPERIMENT_IDS):
            print(f"❌ Invalid choice '{choice}'. Please try again.")
            continue

        experiment = EXPERIMENT_IDS[int(choice) - 1]
        scale = prompt_for_scale()
        print(f"\nRunning [{experiment}] at {scale} scale...")
        try:
            manifest = Benchmark(config_for(experiment, scale)).run()
        except NsoError as e:
            print(f"❌ Run failed: {e}")
            continue

        print_table(manifest)
        for method, text in manifest.equations.items():
            print(f"\n{method}:\n{text}")
        print("\n✅ Experiment complete. Results are shown above.")


if __name__ == '__main__':
    main()
