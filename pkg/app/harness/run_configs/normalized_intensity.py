"""Reference values and preset sweeps for the normalized intensity loss.

Step size, steps rule and t_c are the defaults of app.landscape.dynamics.
The thresholds below are what the slow acceptance tests compare against.
"""
from app.harness.config import SweepSpec

STEPS_PER_LOG2N_STUDY = (6000, 8000, 10000, 12000)

LOSS_PARAMETERS = (0.01, 0.1, 1.0)

# Reference thresholds of the normalized intensity loss, keyed by a.
ALPHA_BBP_INIT = {0.01: 2.85, 0.1: 2.16, 1.0: 1.13}
ALPHA_BBP_THRESHOLD_STATES = {0.01: 4.03, 0.1: 4.65, 1.0: 6.55}
ALPHA_BBP_1RSB = {0.01: 4.29}
ALPHA_CONSTRAINED_SR = {0.01: 4.0, 1.0: 5.55}
ALPHA_SPECTRAL_SR = {0.01: 2.95}
T_BBP_REFERENCE = {0.01: (3.57, 1.0)}

DESK_N_LIST = [256, 512]
DESK_SEEDS = 20

RANDOM_INIT_DESK = SweepSpec(
    loss_a=0.01,
    N_list=DESK_N_LIST,
    alpha_grid=[2.0, 2.5, 3.0, 3.25, 3.5, 3.75, 4.0, 4.5],
    seeds_per_cell=DESK_SEEDS,
    init="random",
    output_dir="runs/random_init_desk",
)

CONSTRAINED_DESK = SweepSpec(
    loss_a=0.01,
    N_list=DESK_N_LIST,
    alpha_grid=[3.4, 3.6, 3.8, 4.0, 4.2, 4.4, 4.6],
    seeds_per_cell=DESK_SEEDS,
    init="constrained",
    output_dir="runs/constrained_desk",
)

SPECTRAL_DESK = SweepSpec(
    loss_a=0.01,
    N_list=DESK_N_LIST,
    alpha_grid=[2.5, 2.75, 3.0, 3.25, 3.5],
    seeds_per_cell=DESK_SEEDS,
    init="spectral",
    output_dir="runs/spectral_desk",
)

PRESETS = {
    "random-init-desk": RANDOM_INIT_DESK,
    "constrained-desk": CONSTRAINED_DESK,
    "spectral-desk": SPECTRAL_DESK,
}
