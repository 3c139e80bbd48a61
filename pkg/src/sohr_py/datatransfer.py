from typing import Optional, List

from pydantic import BaseModel, Field, ConfigDict


class TableNodeArg(BaseModel):
    """
    Args for the computation of one coefficient table node
    """
    key: int = Field(...,
                     ge=0,
                     description="Index of the node in the w grid, used to assemble the table in order")
    d: float = Field(...,
                     gt=0,
                     description="Dimensionless diffusivity")
    w: float = Field(...,
                     description="Angular velocity of the node (before zeta scaling)")
    zeta: float = Field(1.0,
                        gt=0,
                        description="Scale applied to w before solving, the node holds a_k(zeta w)")
    n_theta: int = Field(512,
                         ge=8,
                         description="Number of angular grid nodes")
    scheme: str = Field("spectral",
                        description="Discretization of the collision invariant ODE")
    keep_profiles: bool = Field(True,
                                description="Whether to return the sampled Phi_W and X_W")

    model_config = ConfigDict(
        populate_by_name=True
    )


class TableNodeResult(BaseModel):
    """
    Return type of the node computation
    """
    key: int = Field(...,
                     description="Index of the node in the w grid")
    w: float = Field(...,
                     description="Angular velocity of the node (before zeta scaling)")

    a: Optional[List[float]] = Field(None,
                                     min_length=6,
                                     max_length=6,
                                     description="Coefficients a1 ... a6, empty on error")
    c1_tilde: Optional[float] = Field(None,
                                      description="Order parameter of the equilibrium")
    psi: Optional[float] = Field(None,
                                 description="Angle between force direction and flux direction")
    lam: Optional[float] = Field(None,
                                 description="Normalization lambda(W)")
    c_const: Optional[float] = Field(None,
                                     description="Integration constant C(W)")

    phi: Optional[List[float]] = Field(None,
                                       description="Samples of Phi_W, if requested")
    x: Optional[List[float]] = Field(None,
                                     description="Samples of X_W, if requested")

    error: Optional[str] = Field(None,
                                 description="The traceback if the computation failed")

    model_config = ConfigDict(
        populate_by_name=True
    )

