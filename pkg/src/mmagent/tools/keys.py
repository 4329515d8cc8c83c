from __future__ import annotations

import datetime as dt
import threading
from typing import Callable

from .gateway import RateLimited


class KeyPool:
    """Round-robin credential pool with a per-key daily request budget.

    Keys at budget are skipped; once every key is spent, :meth:`acquire`
    raises :class:`RateLimited` until the day rolls over.
    """

    def __init__(
        self,
        keys: list[str],
        daily_budget: int = 10_000,
        today: Callable[[], dt.date] = dt.date.today,
    ) -> None:
        if not keys:
            raise ValueError("KeyPool needs at least one key")
        if daily_budget < 1:
            raise ValueError("daily_budget must be positive")
        self.keys = list(keys)
        self.daily_budget = daily_budget
        self._today = today
        self._day = today()
        self._used = [0] * len(self.keys)
        self._next = 0
        self._lock = threading.Lock()

    def _roll_day(self) -> None:
        day = self._today()
        if day != self._day:
            self._day = day
            self._used = [0] * len(self.keys)

    def acquire(self) -> str:
        with self._lock:
            self._roll_day()
            n = len(self.keys)
            for offset in range(n):
                i = (self._next + offset) % n
                if self._used[i] < self.daily_budget:
                    self._used[i] += 1
                    self._next = (i + 1) % n
                    return self.keys[i]
            raise RateLimited(f"all {n} keys exhausted their daily budget of {self.daily_budget}")

    def exhaust(self, key: str) -> None:
        """Mark ``key`` spent for today, e.g. after the provider answered 429."""
        with self._lock:
            self._roll_day()
            for i, k in enumerate(self.keys):
                if k == key:
                    self._used[i] = self.daily_budget

    def usage(self) -> dict[str, int]:
        with self._lock:
            return dict(zip(self.keys, self._used))

    @classmethod
    def from_env(cls, value: str | None, daily_budget: int = 10_000) -> "KeyPool":
        keys = [k.strip() for k in (value or "").split(",") if k.strip()]
        return cls(keys, daily_budget)
