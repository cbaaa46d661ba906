"""Federated algorithm family: local trainers, decentralized knowledge distillation and the server loop."""
