#include <math.h>
#include <stdio.h>
#include "alguide.h"

int main(void) {
    const uint64_t counts[6] = {115, 121, 87, 94, 30, 153};
    double out = 0.0;
    if (alg_class_count_stddev(counts, 6, &out) != ALG_STATUS_OK || fabs(out - 41.4) > 0.05) {
        fprintf(stderr, "stddev %f\n", out);
        return 1;
    }
    const double uniform[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    if (alg_entropy(uniform, 3, &out) != ALG_STATUS_OK || fabs(out - log(3.0)) > 1e-9) {
        return 2;
    }
    if (alg_entropy(NULL, 3, &out) != ALG_STATUS_NULL_POINTER || alg_last_error() == NULL) {
        return 3;
    }
    AlgRun *run = NULL;
    if (alg_run_new(NULL, "/nonexistent", "/nonexistent", NULL, &run) != ALG_STATUS_IO || run != NULL) {
        return 4;
    }
    printf("ok %s\n", alg_version());
    return 0;
}
