# Information-theoretic services
