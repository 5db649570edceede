#include <stdio.h>
#include "lobpcg.h"

static int negate(void *user, const double *x, double *y, size_t n, size_t k) {
    (void)user;
    for (size_t i = 0; i < n * k; i++) {
        y[i] = -x[i];
    }
    return 0;
}

int main(void) {
    LobpcgOperator *a = lobpcg_operator_laplacian3d(10, 10, 10);
    LobpcgPreconditioner *t = lobpcg_preconditioner_jacobi(a);
    LobpcgConfig cfg = lobpcg_config_default();
    cfg.block_size = 4;
    cfg.seed = 2;

    LobpcgReport *rep = NULL;
    if (lobpcg_solve(a, NULL, t, &cfg, NULL, &rep) != LOBPCG_ERROR_OK) {
        fprintf(stderr, "solve: %s\n", lobpcg_last_error_message());
        return 1;
    }
    double vals[4], exact[4];
    lobpcg_report_eigenvalues(rep, vals, 4);
    lobpcg_exact_eigenvalues(10, 10, 10, 4, exact);
    for (int j = 0; j < 4; j++) {
        printf("%d %.15e %.15e\n", j, vals[j], exact[j]);
    }
    int ok = lobpcg_report_status(rep) == LOBPCG_STATUS_CONVERGED;

    LobpcgOperator *neg = lobpcg_operator_callback(3, negate, NULL);
    lobpcg_operator_free(neg);
    lobpcg_report_free(rep);
    lobpcg_preconditioner_free(t);
    lobpcg_operator_free(a);
    return ok ? 0 : 1;
}
