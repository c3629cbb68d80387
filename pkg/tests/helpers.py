"""Executor variants that force particular tasks to straggle."""

from __future__ import annotations

from dataclasses import replace

from sketchnewton.simulator import SimExecutor, StragglerModel


class ForcedExecutor(SimExecutor):
    """Straggler-free executor where ``slow(batch, task_id)`` picks tasks to delay.

    Delayed tasks take ``factor`` times longer than nominal.
    """

    def __init__(self, slow, factor: float = 10.0, **model_kwargs):
        model_kwargs.setdefault("straggler_prob", 0.0)
        super().__init__(StragglerModel(**model_kwargs))
        self.slow = slow
        self.factor = factor

    def submit(self, tasks):
        handles = super().submit(tasks)
        batch = self.batches - 1
        for h in handles:
            if self.slow(batch, h.task_id):
                o = h.outcome
                dur = o.duration * self.factor
                h.outcome = replace(o, duration=dur, finish_time=o.start_time + dur, was_straggler=True)
        return handles
