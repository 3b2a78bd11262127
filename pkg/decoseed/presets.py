"""Built-in scenario documents"""

from typing import Dict, List

from .harness import ScenarioConfig, parse_scenario

_QUBIT = """
[system]
h_s = [[0, 0], [0, 0]]
v_s = [[0.5, 0], [0, -0.5]]

[initial_state]
rho0 = plus
"""


def _bump(smoothness: int) -> str:
    return f"""
[scenario]
name = az_bump_s{smoothness}
model = araki_zurek

[environment]
family = bump
smoothness = {smoothness}
half_width = 1.0
n_points = 4096

[time]
t_max = 200.0
n_steps = 2001
""" + _QUBIT


PRESETS: Dict[str, str] = {
    'az_gaussian': """
[scenario]
name = az_gaussian
model = araki_zurek

[environment]
family = gaussian
mean = 0.0
sigma = 1.0

[time]
t_max = 8.0
n_steps = 257

[oracle]
dim_e = 32
tolerance = 1e-10
""" + _QUBIT,
    'az_bump_s1': _bump(1),
    'az_bump_s2': _bump(2),
    'az_bump_s3': _bump(3),
    'az_point_spectrum': """
[scenario]
name = az_point_spectrum
model = araki_zurek

[environment]
family = lattice
spacing = 0.5
n_atoms = 21

[time]
t_max = 15.0
n_steps = 1501
""" + _QUBIT,
    'vanhove_ir_regular': """
[scenario]
name = vanhove_ir_regular
model = vanhove

[environment]
coupling = exp_linear
k_min = 1e-3
k_max = 20.0
n_modes = 2048
cutoffs = 1e-2, 1e-3, 1e-4
t_probe = 10.0

[time]
t_max = 100.0
n_steps = 2001

[oracle]
enabled = false
""" + _QUBIT,
    'vanhove_ir_divergent': """
[scenario]
name = vanhove_ir_divergent
model = vanhove

[environment]
coupling = power
exponent = -0.25
k_min = 1e-4
k_max = 1.0
n_modes = 2048
cutoffs = 1e-2, 1e-3, 1e-4
t_probe = 10.0
ir_growth = 2.0

[time]
t_max = 100.0
n_steps = 1001

[oracle]
enabled = false
""" + _QUBIT,
    'single_mode': """
[scenario]
name = single_mode
model = single_mode

[environment]
eps = 1.0
f0 = 1.0

[time]
t_max = 12.566370614359172
n_steps = 1001

[oracle]
n_max = 40
tolerance = 1e-6
""" + _QUBIT,
    'free_particle': """
[scenario]
name = free_particle
model = free_particle

[environment]
eps = 0.0
f0 = 1.0

[time]
t_max = 5.0
n_steps = 501

[oracle]
enabled = false
""" + _QUBIT,
    'scattering_weak': """
[scenario]
name = scattering_weak
model = scattering

[environment]
family = gaussian
sigma = 1.0
dim_e = 64
v_norm = 0.05
potential = isospectral
level_spacing = 1.0
min_gap = 1.0
seed = 7
moller_kernel = abel
moller_horizon = 10.0
moller_samples = 16

[time]
t_max = 5.0
n_steps = 101
""" + _QUBIT,
}


def list_presets() -> List[str]:
    return sorted(PRESETS)


def load_preset(name: str) -> ScenarioConfig:
    """
    :raises KeyError: for an unknown preset name
    """
    try:
        document = PRESETS[name]
    except KeyError:
        raise KeyError(f'unknown preset {name!r}; available: {", ".join(list_presets())}') from None
    return parse_scenario(document)
