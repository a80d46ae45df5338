import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gravkit.demos import Demo, Frame, Pose, TaskKind

IDENT6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]


def make_frame(t, pos=(0.5, 0.5, 0.5), rot6d=IDENT6, open_state=1,
               joint_vel=(0.0, 0.0, 0.0), touch=(0.0, 0.0)):
    return Frame(t=t, pose=Pose(pos=np.asarray(pos, float), rot6d=np.asarray(rot6d, float)),
                 open=open_state, joint_vel=np.asarray(joint_vel, float),
                 touch=np.asarray(touch, float))


def synthetic_demo(n_frames, task_kind=TaskKind.TOUCH_ONLY, stops=(), toggles=(),
                   touch_at=None, instruction="synthetic"):
    """Hand-built demo: moving frames (constant velocity) except at `stops`,
    gripper toggling at `toggles`, optional touch profile {frame: force}."""
    frames = []
    open_state = 1
    for t in range(n_frames):
        if t in toggles:
            open_state = 1 - open_state
        vel = (0.0, 0.0, 0.0) if t in stops else (0.02, 0.0, 0.0)
        force = (touch_at or {}).get(t, 0.0)
        frames.append(make_frame(t, pos=(0.01 * t, 0.5, 0.5), open_state=open_state,
                                 joint_vel=vel, touch=(force, force)))
    return Demo(task_kind=task_kind, instruction=instruction, frames=frames)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
