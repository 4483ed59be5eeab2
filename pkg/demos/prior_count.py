"""Prior law of the number of components under the power-exponential DPP.

Prints the exact count pmf with its mean and variance for a few values
of rho and nu. The intensity is defined on the unit window, so the law
does not depend on the width of R.
"""

import numpy as np

from dppmix import dpp
from dppmix.spectral import SpectralModel


def main():
    for rho in (1.0, 2.0, 4.0):
        for nu in (1.0, 2.0, 4.0):
            window = dpp.build_window(SpectralModel.pes(rho, nu), (-5.0, 5.0))
            mom = dpp.prior_count_moments(window)
            pmf = dpp.count_pmf(window)[:8]
            print(f"rho={rho:<4} nu={nu:<4} mean={mom.mean:.3f} var={mom.var:.3f} "
                  f"pmf[0:8]={np.round(pmf, 3).tolist()}")


if __name__ == "__main__":
    main()
