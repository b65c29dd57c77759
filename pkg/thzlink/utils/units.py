import numpy as np
from scipy import constants as ct

SPEED_OF_LIGHT = ct.speed_of_light


def db_to_linear(value_db):
    """Power ratio in dB to linear."""
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watts(value_dbm):
    return db_to_linear(value_dbm) * 1.0e-3


def watts_to_dbm(value_w):
    return linear_to_db(np.asarray(value_w, dtype=float) * 1.0e3)
