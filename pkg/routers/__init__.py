# Command-line routes and channel-spec I/O
