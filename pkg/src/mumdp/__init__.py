"""Multi-user MDP scheduling of dependency-structured traffic over a shared slotted channel."""
