"""Population games under dynamic payoff models."""
