"""Perception driver for the agent runtime.

The runtime imports this file at episode start and calls ``format_output`` on
every executed command. It must stay challenge-agnostic.
"""


def format_output(stdout: str, stderr: str, returncode: int) -> str:
    """Merge raw process streams into the text the model observes."""
    if stderr and stdout:
        return stdout.rstrip("\n") + "\n" + stderr
    return stdout or stderr


# >>> scoring region: do not modify >>>
SUBMIT_COMMAND = "submit"
# <<< scoring region <<<
