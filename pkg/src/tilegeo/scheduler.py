"""Sequential-task-flow scheduling of tile kernels.

Tasks are submitted in program order together with the data handles they
read and write. Read-after-write, write-after-read and write-after-write
hazards on each handle become edges of a static DAG, which is then executed
by a pool of threads pulling ready tasks from a shared priority queue.
Priority is submission order, so a single worker replays the sequential
program exactly, and every handle sees its writes in the same order whatever
the worker count. Kernels release the GIL (compiled loops, BLAS, LAPACK),
which is where the parallelism comes from.
"""

import heapq
import threading

from threadpoolctl import ThreadpoolController

_controller = None
_controller_lock = threading.Lock()


def _blas_controller():
    global _controller
    with _controller_lock:
        if _controller is None:
            _controller = ThreadpoolController()
        return _controller


class TaskGraph:
    """A DAG of tile tasks built from their declared data accesses."""

    def __init__(self):
        self._fns = []
        self._succ = []
        self._npred = []
        self._last_writer = {}
        self._readers = {}

    def __len__(self):
        return len(self._fns)

    def submit(self, fn, *args, reads=(), writes=()):
        """Append ``fn(*args)``; returns the task id."""
        tid = len(self._fns)
        self._fns.append((fn, args))
        self._succ.append([])
        preds = set()
        for h in reads:
            w = self._last_writer.get(h)
            if w is not None:
                preds.add(w)
        for h in writes:
            w = self._last_writer.get(h)
            if w is not None:
                preds.add(w)
            preds.update(self._readers.get(h, ()))
        preds.discard(tid)
        for p in preds:
            self._succ[p].append(tid)
        self._npred.append(len(preds))
        for h in reads:
            self._readers.setdefault(h, []).append(tid)
        for h in writes:
            self._last_writer[h] = tid
            self._readers[h] = []
        return tid

    def run(self, workers=1):
        """Execute every task; the first exception raised by a task is re-raised."""
        if not self._fns:
            return
        with _blas_controller().limit(limits=1, user_api="blas"):
            if workers <= 1:
                for fn, args in self._fns:
                    fn(*args)
            else:
                self._run_parallel(int(workers))

    def _run_parallel(self, workers):
        npred = list(self._npred)
        ready = [t for t, k in enumerate(npred) if k == 0]
        heapq.heapify(ready)
        state = {"pending": len(self._fns), "error": None}
        cond = threading.Condition()

        def worker():
            while True:
                with cond:
                    while not ready and state["pending"] and state["error"] is None:
                        cond.wait()
                    if state["error"] is not None or not ready:
                        return
                    tid = heapq.heappop(ready)
                fn, args = self._fns[tid]
                try:
                    fn(*args)
                except BaseException as exc:  # propagate to the caller
                    with cond:
                        if state["error"] is None:
                            state["error"] = exc
                        cond.notify_all()
                    return
                with cond:
                    state["pending"] -= 1
                    for s in self._succ[tid]:
                        npred[s] -= 1
                        if npred[s] == 0:
                            heapq.heappush(ready, s)
                    cond.notify_all()

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(workers - 1)]
        for t in threads:
            t.start()
        worker()
        for t in threads:
            t.join()
        if state["error"] is not None:
            raise state["error"]


def run_independent(fns, workers=1):
    """Run argument-free callables that share no data, in parallel."""
    graph = TaskGraph()
    for fn in fns:
        graph.submit(fn)
    graph.run(workers)
