import logging
import signal


class GracefulWorker:
    interrupts: int = 0
    interrupt_threshold: int = 2
    identifier: int
    logger: logging.Logger = None

    run: bool = True

    def __init__(self, identifier: int):
        """
        Attach handlers for interrupts
        :param identifier: identifier of this class
        """
        self.identifier = identifier

    def register_interrupts(self):
        """
        Register SIGINT and SIGTERM, long loops poll `run` and stop after the current step.
        """
        signal.signal(signal.SIGINT, self.handle_interrupt)
        signal.signal(signal.SIGTERM, self.handle_interrupt)

    def handle_interrupt(self, signal_type: int, frame: object):
        """
        Handle the interrupt. After more than `interrupt_threshold` interrupts exit immediately, otherwise let the
        running loop finish its step and flush what it has.
        """
        self._report(f"{self.identifier:03} - Interrupt")
        self.run = False
        if self.interrupts >= self.interrupt_threshold:
            self._report(f"{self.identifier:03} - Exiting immediately")
            exit(1)

        self.interrupts += 1

    def keep_running(self) -> bool:
        return self.run

    def _report(self, msg: str):
        if self.logger is not None:
            self.logger.warning(msg)
        else:
            print(msg)
