"""Service layer: filesystem workspace, job queue, HTTP API, and CLI."""
