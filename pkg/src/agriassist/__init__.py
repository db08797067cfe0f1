"""Retrieval-augmented, intent-guided agricultural advisory engine.

The package is organized around one module per subsystem:

- ``schema``: crop/intent/slot registry loading and validation
- ``curation``: raw text modification stages and quality filters
- ``lingua``: rule-based language identification and translation adapters
- ``retrieval``: embedding index build, exact cosine search, persistence
- ``backends``: LLM backend abstraction, router, and deterministic stub
- ``dialogue``: the guided-conversation state machine
- ``prompting``: few-shot prompt assembly under a token budget
- ``service``: HTTP session service with an append-only journal
- ``metrics``: evaluation report computed from session journals
- ``cli``: operator command line tying it all together
"""

__version__ = "0.1.0"
