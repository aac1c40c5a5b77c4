from enum import Enum


class Architecture(Enum):
    """
    The four studied models, one per cell of the residual x attention grid.
    """

    UNET = "unet"
    RESUNET = "resunet"
    ATTUNET = "attunet"
    ATTRESUNET = "attresunet"

    @property
    def use_residual(self) -> bool:
        return self in (Architecture.RESUNET, Architecture.ATTRESUNET)

    @property
    def use_attention_gates(self) -> bool:
        return self in (Architecture.ATTUNET, Architecture.ATTRESUNET)

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @property
    def component_label(self) -> str:
        """
        Component column of the baseline-comparison table.
        """
        if self.use_residual and self.use_attention_gates:
            return "+ Both"
        if self.use_residual:
            return "+ Residual"
        if self.use_attention_gates:
            return "+ Attention"
        return "Baseline"

    @classmethod
    def from_flags(cls, use_residual: bool, use_attention_gates: bool) -> "Architecture":
        for arch in cls:
            if arch.use_residual == use_residual and arch.use_attention_gates == use_attention_gates:
                return arch
        raise ValueError  # unreachable, the grid is complete

    @classmethod
    def choices(cls) -> str:
        return ", ".join(a.value for a in cls)


_DISPLAY_NAMES = {
    Architecture.UNET: "Standard U-Net",
    Architecture.RESUNET: "ResUNet",
    Architecture.ATTUNET: "Attention U-Net",
    Architecture.ATTRESUNET: "Attention-ResUNet",
}


class PublishedFigure(Enum):
    """
    Published architecture accounting, kept as cited figures for the inspect report.
    """

    PARAMETERS = 14.7e6
    GFLOPS_256 = 45.0
