"""FedDKD package: federated learning with decentralized knowledge distillation on a dense-network engine."""
