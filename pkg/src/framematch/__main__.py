from .eval_cli import entrypoint

entrypoint()
