"""Expected read decisions for the bundled WGB deployment, worked out by hand.

LT1 carries a department-wide grant, FN05 and SE13 are private offices, and
the building manager holds a grant on WGB.
"""

from __future__ import annotations

LT1, FN05, SE13 = "elsys-co2-04a1c1", "elsys-co2-04f505", "elsys-co2-04e513"

EXPECTED = {
    ("p-fn05", LT1): True, ("p-fn05", FN05): True, ("p-fn05", SE13): False,
    ("p-se13", LT1): True, ("p-se13", FN05): False, ("p-se13", SE13): True,
    ("p-manager", LT1): True, ("p-manager", FN05): True, ("p-manager", SE13): True,
    ("p-visitor", LT1): False, ("p-visitor", FN05): False, ("p-visitor", SE13): False,
}
