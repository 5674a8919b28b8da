#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "helitrack.h"

int main(void) {
    HtSimulation *sim = NULL;
    if (ht_simulation_from_preset("fig3-damping", &sim) != HT_STATUS_OK) {
        fprintf(stderr, "preset: %s\n", ht_last_error());
        return 1;
    }
    if (ht_simulation_run(sim) != HT_STATUS_OK) {
        fprintf(stderr, "run: %s\n", ht_last_error());
        return 1;
    }
    size_t rows = 0;
    ht_simulation_row_count(sim, &rows);
    size_t n = ht_column_count();
    double *buf = malloc(n * sizeof(double));
    ht_simulation_row(sim, rows - 1, buf, n);
    printf("%zu %zu %.3f %s\n", rows, n, buf[0], ht_column_name(n - 1));
    free(buf);
    ht_simulation_free(sim);

    char *report = NULL;
    if (ht_linearize(NULL, &report) != HT_STATUS_OK || strstr(report, "\"asymptotically-stable\"") == NULL) {
        return 1;
    }
    ht_string_free(report);

    HtStatus s = ht_simulation_from_preset("nope", &sim);
    printf("%d %s\n", (int)s, ht_last_error());
    return 0;
}
