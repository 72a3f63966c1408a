# Pipeline commands
