# Models: value types, configs and networks
