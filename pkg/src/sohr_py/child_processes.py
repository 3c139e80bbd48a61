import logging
import multiprocessing as mp
import queue
import time
import traceback
from logging.handlers import QueueHandler
from typing import List, Union

from sohr_py.base_process import GracefulWorker
from sohr_py.coefficients import compute_node
from sohr_py.datatransfer import TableNodeArg, TableNodeResult


class TableNodeWorker(GracefulWorker):
    """
    Worker process of a table build. Takes batches (lists) of TableNodeArg from the command queue and answers each
    batch with the list of results. A None on the command queue ends the worker, which acknowledges with a None on
    the result queue. The worker also ends after `timeout` seconds without commands.
    """
    logger: logging.Logger = None
    timeout: float

    cmd_queue: mp.Queue
    res_queue: mp.Queue

    poll_interval: float = 0.01

    def __init__(self, identifier: int,
                 cmd_queue: mp.Queue,
                 res_queue: mp.Queue,
                 log_queue: mp.Queue,
                 log_level: int = logging.DEBUG,
                 timeout: float = 30):
        super().__init__(identifier)
        self.timeout = timeout
        self.cmd_queue = cmd_queue
        self.res_queue = res_queue
        self.log_queue = log_queue
        self.log_level = log_level

        self.nodes_solved = 0
        self.nodes_failed = 0
        self.solve_time = 0.0

    def prep_logging(self):
        """
        Logger of the child, records go through the queue of the parent's listener
        """
        self.logger = logging.getLogger(f"TableWorker_{self.identifier:03}")
        self.logger.setLevel(self.log_level)
        self.logger.handlers.clear()
        self.logger.addHandler(QueueHandler(self.log_queue))
        self.logger.propagate = False

    def main(self):
        """
        Entry point of the process. Interrupts are handled by the parent, it stops the children with None.
        """
        self.prep_logging()

        idle = 0.0
        while idle < self.timeout and self.run:
            try:
                batch = self.cmd_queue.get(block=True, timeout=self.poll_interval)
            except queue.Empty:
                idle += self.poll_interval
                continue
            idle = 0.0

            if batch is None:
                self.logger.debug(f"Stopping after {self.nodes_solved} nodes ({self.nodes_failed} failed) "
                                  f"in {self.solve_time:.2f}s")
                self.res_queue.put(None)
                return

            self.res_queue.put(self.solve_batch(batch))

        if idle >= self.timeout:
            self.logger.warning(f"No commands for {self.timeout}s, stopping")
        self.res_queue.put(None)

    def solve_batch(self, batch: Union[TableNodeArg, List[TableNodeArg]]) -> List[TableNodeResult]:
        if isinstance(batch, TableNodeArg):
            batch = [batch]
        start = time.perf_counter()
        results = [self.solve_node(arg) for arg in batch]
        self.solve_time += time.perf_counter() - start
        return results

    def solve_node(self, arg: TableNodeArg) -> TableNodeResult:
        """
        Solve equilibrium and collision invariant of one node.

        :param arg: the node
        :return: the result, with the traceback in `error` on failure
        """
        try:
            res = compute_node(arg)
            self.nodes_solved += 1
            return res
        except Exception as e:
            self.nodes_failed += 1
            self.logger.error(f"Error at d={arg.d}, w={arg.w}: {e}")
            return TableNodeResult(key=arg.key, w=arg.w, error=traceback.format_exc())
