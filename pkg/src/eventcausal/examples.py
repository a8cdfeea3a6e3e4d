"""Example local independence graphs used in documentation, tests and the CLI."""

from __future__ import annotations

from .graph import LocalIndependenceGraph, build_graph

P, B = "process", "baseline"


def three_process_graph() -> LocalIndependenceGraph:
    """Three processes with feedback between N2 and N3.

    N1 has the single parent N3, N2 has parents N1 and N3, N3 has parents N1
    and N2.
    """
    return build_graph(
        [("N1", P), ("N2", P), ("N3", P)],
        [("N1", "N2"), ("N1", "N3"), ("N3", "N2"), ("N2", "N3"), ("N3", "N1")],
    )


def baseline_process_graph(censoring: str | None = None) -> LocalIndependenceGraph:
    """Two baseline variables X, Z and processes Na, Nb.

    Z -> X, Z -> Na, X -> Na, X -> Nb, Nb -> Na.  ``censoring`` optionally tags
    one process with the censoring role.
    """
    nodes = [("X", B), ("Z", B), ("Na", P), ("Nb", P)]
    if censoring:
        nodes = [(n, k, ["censoring"] if n == censoring else []) for n, k in nodes]
    return build_graph(nodes, [("Z", "X"), ("Z", "Na"), ("X", "Na"), ("X", "Nb"), ("Nb", "Na")])


def latent_triangle_graph() -> LocalIndependenceGraph:
    """Treatment Ns, outcome Ny and three latent processes U1, U2, U3."""
    return build_graph(
        [("U1", P), ("U2", P), ("U3", P), ("Ns", P, ["treatment"]), ("Ny", P, ["outcome"])],
        [
            ("U2", "Ns"), ("U2", "U1"), ("U3", "U1"), ("U3", "Ny"),
            ("Ns", "Ny"), ("Ns", "U2"), ("Ns", "U1"),
            ("Ny", "Ns"), ("Ny", "U1"), ("Ny", "U3"),
        ],
    )


def bivariate_outcome_graph() -> LocalIndependenceGraph:
    """Treatment Ns, bivariate outcome (N1, N2) and one latent process U."""
    return build_graph(
        [("U", P), ("Ns", P, ["treatment"]), ("N1", P, ["outcome"]), ("N2", P, ["outcome"])],
        [
            ("N2", "Ns"), ("N2", "U"), ("N2", "N1"), ("U", "N1"), ("U", "N2"),
            ("Ns", "N2"), ("Ns", "U"), ("Ns", "N1"),
            ("N1", "Ns"), ("N1", "U"), ("N1", "N2"),
        ],
    )


def confounded_treatment_graph(latent_L: bool = False) -> LocalIndependenceGraph:
    """Time-dependent confounding by a process L with latent U1, U2, U3 and
    censoring Nc.  With ``latent_L`` the confounder is unobserved."""
    roles = {"Nx": ["treatment"], "Ny": ["outcome"], "Nc": ["censoring"], "L": [] if latent_L else ["marginalize"]}
    nodes = [(v, P, roles.get(v, [])) for v in ("Nx", "Ny", "Nc", "L", "U1", "U2", "U3")]
    edges = [
        ("Nx", "U2"), ("Nx", "U1"), ("Nx", "Ny"), ("Nx", "L"), ("Nx", "Nc"),
        ("U1", "Ny"), ("U1", "L"),
        ("U2", "Nx"),
        ("L", "U2"), ("L", "Ny"), ("L", "Nx"), ("L", "Nc"), ("L", "U1"),
        ("Ny", "Nc"),
        ("U3", "Nc"),
    ]
    return build_graph(nodes, edges)


HPV_NODES = {
    "LatentDisease": (B, ["latent"]),
    "LatentProgression": (P, ["latent"]),
    "Censoring": (P, ["censoring"]),
    "HPVResult": (B, ["baseline_keep"]),
    "TestType": (B, ["baseline_keep"]),
    "Cytology": (B, ["baseline_keep"]),
    "SubsequentTest": (P, ["treatment"]),
    "CIN2": (P, ["outcome"]),
}

HPV_EDGES = [
    ("LatentDisease", "HPVResult"),
    ("LatentDisease", "Cytology"),
    ("LatentDisease", "CIN2"),
    ("LatentDisease", "LatentProgression"),
    ("LatentProgression", "CIN2"),
    ("HPVResult", "CIN2"),
    ("HPVResult", "SubsequentTest"),
    ("CIN2", "Censoring"),
    ("TestType", "SubsequentTest"),
    ("TestType", "HPVResult"),
    ("Cytology", "CIN2"),
    ("Cytology", "SubsequentTest"),
    ("SubsequentTest", "CIN2"),
]


def hpv_graph() -> LocalIndependenceGraph:
    """HPV secondary-screening structure with roles for the testing analysis."""
    return build_graph([(k, kind, roles) for k, (kind, roles) in HPV_NODES.items()], HPV_EDGES)


GRAPHS = {
    "three_process": three_process_graph,
    "baseline_process": baseline_process_graph,
    "latent_triangle": latent_triangle_graph,
    "bivariate_outcome": bivariate_outcome_graph,
    "confounded_treatment": confounded_treatment_graph,
    "hpv": hpv_graph,
}
