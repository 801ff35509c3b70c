import pytest

from vlsim.endpoints import DeviceAddress
from vlsim.system import System


def run_op(system, gen):
    """Drive one generator operation to completion on the timeline."""
    box = {}

    def wrapper():
        box["value"] = yield from gen

    system.spawn(wrapper())
    system.run()
    return box.get("value")


def device_pa(sqi, vlrd_id=0):
    return DeviceAddress(vlrd_id=vlrd_id, sqi=sqi, page=0, offset=0)


@pytest.fixture
def system():
    return System(seed=0)
