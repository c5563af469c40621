"""Shared test helpers."""


class FakeRng:
    """Feeds a scripted sequence of uniforms to anything expecting .random()."""

    def __init__(self, values):
        self._values = list(values)

    def random(self):
        if not self._values:
            raise AssertionError("rng consulted more often than the script allows")
        return self._values.pop(0)

    @property
    def unused(self):
        return len(self._values)
