"""Thread-safe accounting of plant samples versus generated samples."""

import threading


def collection_seconds(samples, sampling_period):
    """Wall time the plant needs to produce ``samples`` at ``sampling_period`` seconds each."""
    return samples * sampling_period


class SampleCounter:
    """Accumulates sample counts across a training or collection session.

    Categories tracked separately:
        physical:  samples measured on the plant (data collection and
                   sample-mode rollouts)
        generated: samples synthesised from the Hankel matrix; these
                   never touch the plant
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._physical = 0
        self._generated = 0

    def add_physical(self, count):
        with self._lock:
            self._physical += int(count)

    def add_generated(self, count):
        with self._lock:
            self._generated += int(count)

    @property
    def physical(self):
        with self._lock:
            return self._physical

    def get_counts(self):
        """Return (physical, generated) sample counts."""
        with self._lock:
            return self._physical, self._generated


# Singleton instance used when no per-run counter is supplied
sample_counter = SampleCounter()
