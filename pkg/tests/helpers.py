"""Small hand-built networks shared by the tests."""
import numpy as np

from gridvoc.netmodel import Bus, LineBranch, NetworkCase


def triangle(w=1.0, ratio=10.0):
    """Three inverters on a triangle with |Y| = w per line and x/r = ratio."""
    r = 1.0 / (w * np.hypot(1.0, ratio))
    brs = [LineBranch(0, 1, r, ratio * r), LineBranch(1, 2, r, ratio * r), LineBranch(0, 2, r, ratio * r)]
    return NetworkCase([Bus(str(k)) for k in (1, 2, 3)], brs, name="triangle")


def two_bus(r=0.01, x=0.1):
    return NetworkCase([Bus("1"), Bus("2")], [LineBranch(0, 1, r, x)], name="two-bus")
