"""Packed parameter layout shared by the compiled and pure-Python integrators.

The integrator works in the *plan frame*: origin at the planned TCP position
with the needle tip on the skin entry, +z along the planned insertion
direction. Units: mm, s, kg, N, rad.
"""

PARAM_NAMES = (
    "dt",
    "ctrl_every",
    "m_lin",
    "m_rot",
    "k_hand",
    "b_hand",
    "k_hand_rot",
    "b_hand_rot",
    "guided",
    "k_lat",
    "k_ax",
    "k_rot",
    "d_lat",
    "d_ax",
    "d_rot",
    "goal_pre_x",
    "goal_pre_y",
    "goal_pre_z",
    "goal_fin_x",
    "goal_fin_y",
    "goal_fin_z",
    "goal_rot_x",
    "goal_rot_y",
    "goal_rot_z",
    "tremor_lin",
    "tremor_rot",
    "tremor_alpha",
    "drift_lin",
    "drift_rot",
    "align_min_t",
    "align_max_t",
    "align_lat_thr",
    "align_ang_thr",
    "insert_t",
    "settle_t",
)
P = {name: i for i, name in enumerate(PARAM_NAMES)}
N_PARAMS = len(PARAM_NAMES)

# standard-normal draws per control tick: tremor xyz, tremor rot xy,
# drift lateral xy, drift rot xy
NOISE_COLUMNS = 9

# recorded trajectory rows: t, position xyz, rotvec xyz, velocity xyz,
# angular velocity xyz, phase
TRAJ_COLUMNS = 14

PHASE_ALIGN = 0
PHASE_INSERT = 1
