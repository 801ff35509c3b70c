import pytest

from vlsim.engine import SLEEP, DeadlockError, Engine, PHASE_DEVICE, Ticket


def test_timed_yields_advance_in_order():
    eng = Engine()
    log = []

    def actor(name, delays):
        for d in delays:
            yield d
            log.append((eng.now, name))

    eng.spawn(actor("a", [5, 5]))
    eng.spawn(actor("b", [3, 10]))
    eng.run()
    assert log == [(3, "b"), (5, "a"), (10, "a"), (13, "b")]


def test_equal_time_ties_resolve_by_insertion_order():
    eng = Engine()
    log = []

    def actor(name):
        yield 7
        log.append(name)

    for name in ("x", "y", "z"):
        eng.spawn(actor(name))
    eng.run()
    assert log == ["x", "y", "z"]


def test_device_phase_runs_before_actors():
    eng = Engine()
    log = []

    def dev():
        yield 4
        log.append("dev")

    def actor():
        yield 4
        log.append("actor")

    eng.spawn(actor())
    eng.spawn(dev(), phase=PHASE_DEVICE, daemon=True)
    eng.run()
    assert log == ["dev", "actor"]


def test_ticket_resume_after_return_delay():
    eng = Engine()
    seen = {}

    def waiter():
        t = Ticket(return_delay=7)
        eng.spawn(resolver(t), daemon=True)
        yield t
        seen["status"] = t.status
        seen["at"] = eng.now

    def resolver(t):
        yield 10
        eng.resolve(t, "ACK")

    eng.spawn(waiter())
    eng.run()
    assert seen == {"status": "ACK", "at": 17}


def test_sleep_and_wake():
    eng = Engine()
    log = []

    def sleeper():
        yield SLEEP
        log.append(eng.now)

    aid = eng.spawn(sleeper())

    def waker():
        yield 9
        eng.wake(aid, at=12)

    eng.spawn(waker())
    eng.run()
    assert log == [12]


def test_unresolved_ticket_is_a_deadlock():
    eng = Engine()

    def stuck():
        yield Ticket(return_delay=1)

    eng.spawn(stuck())
    with pytest.raises(DeadlockError):
        eng.run()


def test_daemon_sleep_is_not_a_deadlock():
    eng = Engine()

    def daemon():
        yield SLEEP

    def worker():
        yield 3

    eng.spawn(daemon(), daemon=True)
    eng.spawn(worker())
    assert eng.run() == 3
