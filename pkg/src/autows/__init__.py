"""Weight-streaming design-space exploration and DMA schedule simulation for layer-pipelined accelerators."""

__version__ = "0.1.0"
