from .history import BuildAttempt, Project
