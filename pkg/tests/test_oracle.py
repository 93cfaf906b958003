# tests/test_oracle.py
"""Compiled modules on the pipeline against the reference interpreter, packet by packet."""
import random

import pytest

from src.dsl import parse_dsl
from src.interpreter import ReferenceModel, outcome_key
from tests.conftest import FIXTURES, random_packet, read_module

DST_IPS = ("10.0.0.2", "10.1.0.1", "10.0.0.100", "10.9.9.9")
PACKETS = 1000


@pytest.mark.slow
@pytest.mark.parametrize("name", FIXTURES)
def test_pipeline_matches_reference(controller, system_config, name):
    source = read_module(name)
    prog = parse_dsl(source)
    controller.load_module(source, 10)
    ref = ReferenceModel(prog, system_config)
    rng = random.Random(FIXTURES.index(name))

    for i in range(PACKETS):
        if i == 300:
            controller.set_stats(link_util=0, queue_len=80)
            ref.set_stats(link_util=0, queue_len=80)
        elif i == 600:
            controller.set_stats(link_util=120, queue_len=80)
            ref.set_stats(link_util=120, queue_len=80)
        pkt = random_packet(prog, 10, rng, DST_IPS)
        got = outcome_key(controller.inject(pkt))
        want = ref.run(pkt).key()
        assert got == want, f"packet {i}: {pkt.hex()}"

    assert controller.packet_counters()[1] == ref.state.forwarded
