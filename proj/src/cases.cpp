// placeholder — implemented in a later layer
