import os
import sys
import datetime
from typing import List, Optional

class Logger:
    """Class for handling pipeline logging to a file, to stderr, or in memory."""

    def __init__(self, log_file_path: Optional[str] = None, echo: bool = False):
        """
        Initialize the logger.

        Args:
            log_file_path (str, optional): Path to the log file. If None, entries are kept in memory only.
            echo (bool): Mirror every entry to stderr.
        """
        self.log_file = log_file_path
        self.echo = echo
        self._entries: List[str] = []
        if self.log_file is not None:
            self._ensure_file()

    def _ensure_file(self) -> None:
        """Ensure the log file exists."""
        directory = os.path.dirname(self.log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if not os.path.exists(self.log_file):
            with open(self.log_file, "w") as f:
                f.write("")

    def add_log(self, message: str) -> str:
        """
        Append a new log entry.

        Args:
            message (str): The log content to be added.

        Returns:
            str: Confirmation message indicating the log was saved.
        """
        timestamp = datetime.datetime.now().strftime("[%Y-%m-%d %H:%M:%S]")
        log_entry = f"{timestamp} {message}"

        self._entries.append(log_entry)
        if self.log_file is not None:
            with open(self.log_file, "a") as f:
                f.write(log_entry + "\n")
        if self.echo:
            print(log_entry, file=sys.stderr)
        return "Log saved!"

    def get_logs(self) -> str:
        """
        Read and return all logs.

        Returns:
            str: All logs as a single string separated by line breaks.
                 If no logs exist, a default message is returned.
        """
        if self.log_file is None:
            content = "\n".join(self._entries).strip()
        else:
            self._ensure_file()
            with open(self.log_file, "r") as f:
                content = f.read().strip()
        return content or "No logs yet."

    def get_latest_log(self) -> str:
        """
        Get the most recently added log entry.

        Returns:
            str: The last log entry. If no logs exist, a default message is returned.
        """
        if self.log_file is None:
            return self._entries[-1] if self._entries else "No logs yet."
        self._ensure_file()
        with open(self.log_file, "r") as f:
            lines = f.readlines()
        return lines[-1].strip() if lines else "No logs yet."
