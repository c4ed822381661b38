import pytest

from wnoskit.dsl import parse_program
from wnoskit.instantiation import DIConfig, pool_from_members
from wnoskit.resources import program_text

# Reference instantiation of the sessions sharing each of 20 links
# (10 sessions per link, drawn from 20). Session 4 uses the links
# 0, 3, 4, 7, 9, 10, 11, 12, 13, 14, 18 and 19.
SESSIONS_OF_LINK_REFERENCE = {
    0: [3, 4, 6, 7, 8, 14, 15, 17, 18, 19],
    1: [0, 2, 3, 6, 8, 10, 11, 12, 16, 17],
    2: [0, 5, 6, 7, 11, 13, 14, 15, 18, 19],
    3: [0, 1, 4, 6, 10, 11, 13, 16, 17, 19],
    4: [0, 3, 4, 7, 8, 12, 13, 14, 18, 19],
    5: [1, 3, 6, 10, 11, 12, 13, 15, 18, 19],
    6: [0, 1, 3, 5, 6, 7, 11, 14, 15, 16],
    7: [1, 3, 4, 6, 12, 14, 15, 16, 17, 19],
    8: [1, 2, 5, 6, 7, 8, 9, 10, 12, 14],
    9: [0, 2, 3, 4, 5, 12, 13, 15, 16, 17],
    10: [0, 1, 4, 6, 7, 8, 9, 11, 16, 19],
    11: [4, 5, 6, 7, 14, 15, 16, 17, 18, 19],
    12: [2, 3, 4, 6, 7, 8, 12, 15, 17, 18],
    13: [4, 6, 8, 13, 14, 15, 16, 17, 18, 19],
    14: [0, 1, 3, 4, 5, 6, 8, 12, 16, 17],
    15: [2, 3, 6, 10, 11, 12, 13, 15, 16, 19],
    16: [1, 2, 3, 5, 6, 8, 9, 12, 15, 16],
    17: [1, 2, 7, 8, 12, 13, 14, 16, 18, 19],
    18: [0, 1, 3, 4, 6, 7, 12, 13, 18, 19],
    19: [0, 2, 4, 5, 8, 12, 14, 15, 16, 17],
}

SESSION4_LINKS = (0, 3, 4, 7, 9, 10, 11, 12, 13, 14, 18, 19)

TOY_SESSIONS_OF_LINK = {0: [0, 1], 1: [0, 2], 2: [1, 2]}


@pytest.fixture
def toy_pool():
    return pool_from_members(DIConfig(n_global=3, n_local=2, rng_seed=0),
                             {"lnkses": TOY_SESSIONS_OF_LINK})


@pytest.fixture
def reference_pool():
    return pool_from_members(DIConfig(n_global=20, n_local=10, rng_seed=0),
                             {"lnkses": SESSIONS_OF_LINK_REFERENCE})


@pytest.fixture
def toy_spec():
    return parse_program(program_text("toy_sum_rate"))


@pytest.fixture
def jocp_spec():
    return parse_program(program_text("cp1_sumlog"))
