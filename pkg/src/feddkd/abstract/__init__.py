"""Abstract interfaces of the federated algorithm family."""
