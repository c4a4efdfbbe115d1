from mrtsim.streams import RANDOMIZATION, StreamBank, stream


def test_same_seed_same_draws():
    a = stream(7, RANDOMIZATION, "P001", "suggestions").random(5)
    b = stream(7, RANDOMIZATION, "P001", "suggestions").random(5)
    assert list(a) == list(b)


def test_streams_are_independent():
    base = stream(7, RANDOMIZATION, "P001", "suggestions").random(5)
    assert list(stream(8, RANDOMIZATION, "P001", "suggestions").random(5)) != list(base)
    assert list(stream(7, RANDOMIZATION, "P002", "suggestions").random(5)) != list(base)
    assert list(stream(7, RANDOMIZATION, "P001", "planning").random(5)) != list(base)


def test_bank_caches_streams():
    bank = StreamBank(3)
    g = bank.get(RANDOMIZATION, "P001", "planning")
    assert bank.get(RANDOMIZATION, "P001", "planning") is g
    first = g.random()
    other = StreamBank(3)
    # draws from another participant do not shift this one
    other.get(RANDOMIZATION, "P002", "planning").random(10)
    assert other.get(RANDOMIZATION, "P001", "planning").random() == first
